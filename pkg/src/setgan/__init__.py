"""Multi-scale single-image GAN with parallel per-scale training, SSIM
early exit, progressive model delivery and edge-side image editing."""

from .gan_models import (
    ScaleModel,
    build_discriminator,
    build_generator,
    channels_for_scale,
    param_count,
)
from .inference import GenerationRequest, generate, inject
from .metrics import exit_score, ssim
from .pyramid import (
    ImagePyramid,
    PyramidError,
    ScaleSchedule,
    build_pyramid,
    compute_scale_schedule,
    load_image,
    resize_image,
    save_image,
    upscale,
)
from .trainer import (
    TrainConfig,
    TrainingResult,
    evaluate_exit,
    train_all_parallel,
    train_scale,
)

__version__ = "0.1.0"

__all__ = [
    "GenerationRequest",
    "ImagePyramid",
    "PyramidError",
    "ScaleModel",
    "ScaleSchedule",
    "TrainConfig",
    "TrainingResult",
    "build_discriminator",
    "build_generator",
    "build_pyramid",
    "channels_for_scale",
    "compute_scale_schedule",
    "evaluate_exit",
    "exit_score",
    "generate",
    "inject",
    "load_image",
    "param_count",
    "resize_image",
    "save_image",
    "ssim",
    "train_all_parallel",
    "train_scale",
    "upscale",
    "__version__",
]
