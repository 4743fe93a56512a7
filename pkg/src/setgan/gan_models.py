"""Per-scale generator and discriminator networks.

Both nets are fully convolutional stacks of five 3x3 blocks with zero
"same" padding, so spatial dims are preserved and any input size at or
above the receptive field works. Channel width starts at 32 and doubles
every 4 scales. Batch norm layers carry no running statistics, so the
trainable parameter list is the complete model state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .pyramid import as_image_grid, grid_dims

BLOCK_COUNT = 5
KERNEL_SIZE = 3
BASE_CHANNELS = 32
LEAKY_SLOPE = 0.2
# Five 3x3 convolutions: 1 + 5*(3-1) = 11 pixels.
RECEPTIVE_FIELD = 1 + BLOCK_COUNT * (KERNEL_SIZE - 1)

INIT_STD = 0.02


class ModelError(ValueError):
    """Invalid model input or parameter payload."""


def channels_for_scale(scale_index: int) -> int:
    """Channel width at a scale: 32 doubled once per 4 scales."""
    if scale_index < 0:
        raise ModelError("scale_index must be >= 0")
    return BASE_CHANNELS * 2 ** (scale_index // 4)


def _block(cin: int, cout: int, normed: bool, activation: nn.Module | None) -> list[nn.Module]:
    layers: list[nn.Module] = [nn.Conv2d(cin, cout, KERNEL_SIZE, padding=KERNEL_SIZE // 2)]
    if normed:
        # No running stats: batch statistics always, and every trainable
        # scalar lives in .parameters() (serialization counts on this).
        layers.append(nn.BatchNorm2d(cout, affine=True, track_running_stats=False))
    if activation is not None:
        layers.append(activation)
    return layers


class ScaleGenerator(nn.Module):
    """Five-block residual generator for one scale.

    The coarsest scale maps a noise field straight to an image; every
    other scale adds a learned residual on top of its coarse input.
    """

    def __init__(self, channels: int, coarsest: bool):
        super().__init__()
        self.channels = channels
        self.coarsest = coarsest
        layers: list[nn.Module] = []
        layers += _block(3, channels, True, nn.LeakyReLU(LEAKY_SLOPE))
        for _ in range(BLOCK_COUNT - 2):
            layers += _block(channels, channels, True, nn.LeakyReLU(LEAKY_SLOPE))
        layers += _block(channels, 3, False, nn.Tanh())
        self.net = nn.Sequential(*layers)

    def forward(self, noise: torch.Tensor, coarse: torch.Tensor | None = None) -> torch.Tensor:
        if self.coarsest:
            if coarse is not None:
                raise ModelError("coarsest generator takes no coarse input")
            return self.net(noise)
        if coarse is None:
            raise ModelError("non-coarsest generator requires a coarse input")
        if coarse.shape != noise.shape:
            raise ModelError(
                f"coarse/noise shape mismatch: {tuple(coarse.shape)} vs {tuple(noise.shape)}"
            )
        # Residual on the coarse image; the sum can leave the value range,
        # clamp keeps the image contract (subgradient is fine for training).
        return torch.clamp(coarse + self.net(coarse + noise), -1.0, 1.0)


class ScaleDiscriminator(nn.Module):
    """Patch critic: five blocks, unnormalized linear head, spatial mean."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        layers: list[nn.Module] = []
        layers += _block(3, channels, True, nn.LeakyReLU(LEAKY_SLOPE))
        for _ in range(BLOCK_COUNT - 2):
            layers += _block(channels, channels, True, nn.LeakyReLU(LEAKY_SLOPE))
        layers += _block(channels, 1, False, None)
        self.net = nn.Sequential(*layers)

    def score_map(self, image: torch.Tensor) -> torch.Tensor:
        return self.net(image)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        # One scalar per sample: mean over the patch score map.
        return self.score_map(image).mean(dim=(1, 2, 3))


@dataclass
class ScaleModel:
    """One scale's trained state plus the sampling metadata it needs."""

    scale_index: int
    generator: ScaleGenerator
    discriminator: ScaleDiscriminator
    noise_amplitude: float = 1.0
    fixed_rec_seed: int = 0
    training_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Construction and initialization
# ---------------------------------------------------------------------------

def _init_module(module: nn.Module, rng: np.random.Generator) -> None:
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            w = rng.normal(0.0, INIT_STD, size=tuple(m.weight.shape))
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(w.astype(np.float32)))
                m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()


def build_generator(scale_index: int, rng: np.random.Generator | None = None) -> ScaleGenerator:
    if rng is None:
        rng = np.random.default_rng(scale_index)
    gen = ScaleGenerator(channels_for_scale(scale_index), coarsest=scale_index == 0)
    _init_module(gen, rng)
    return gen


def build_discriminator(scale_index: int, rng: np.random.Generator | None = None) -> ScaleDiscriminator:
    if rng is None:
        rng = np.random.default_rng(scale_index)
    disc = ScaleDiscriminator(channels_for_scale(scale_index))
    _init_module(disc, rng)
    return disc


def param_count(scale_index: int) -> int:
    """Exact trainable scalar count of generator plus discriminator."""
    gen = ScaleGenerator(channels_for_scale(scale_index), coarsest=scale_index == 0)
    disc = ScaleDiscriminator(channels_for_scale(scale_index))
    return sum(p.numel() for p in gen.parameters()) + sum(
        p.numel() for p in disc.parameters()
    )


# ---------------------------------------------------------------------------
# Tensor conversion and noise
# ---------------------------------------------------------------------------

def to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) array -> (1, 3, H, W) float32 tensor."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ModelError(f"expected (H, W, 3), got {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None]


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) tensor -> (H, W, 3) float32 array."""
    if tensor.ndim != 4 or tensor.shape[0] != 1 or tensor.shape[1] != 3:
        raise ModelError(f"expected (1, 3, H, W), got {tuple(tensor.shape)}")
    return tensor.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float32)


def gaussian_field(dims: tuple[int, int], seed: int, amplitude: float) -> np.ndarray:
    """Reproducible (H, W, 3) Gaussian noise field with the given std."""
    h, w = dims
    rng = np.random.Generator(np.random.PCG64(seed))
    return (amplitude * rng.standard_normal((h, w, 3))).astype(np.float32)


# ---------------------------------------------------------------------------
# Numpy-facing forwards
# ---------------------------------------------------------------------------

def generator_forward(
    model: ScaleModel, noise: np.ndarray, coarse_input: np.ndarray | None = None
) -> np.ndarray:
    """Run one generator on array inputs; returns an image grid."""
    noise_t = to_tensor(noise)
    coarse_t = None
    if coarse_input is not None:
        coarse_input = as_image_grid(coarse_input)
        if grid_dims(coarse_input) != (noise.shape[0], noise.shape[1]):
            raise ModelError(
                f"coarse input dims {grid_dims(coarse_input)} do not match noise "
                f"dims {noise.shape[:2]}"
            )
        coarse_t = to_tensor(coarse_input)
    with torch.no_grad():
        out = model.generator(noise_t, coarse_t)
    return as_image_grid(to_image(out))


def discriminator_forward(model: ScaleModel, image: np.ndarray) -> float:
    """Mean patch score of an image under one discriminator."""
    image = as_image_grid(image)
    h, w = grid_dims(image)
    if h < RECEPTIVE_FIELD or w < RECEPTIVE_FIELD:
        raise ModelError(
            f"image {h}x{w} smaller than the {RECEPTIVE_FIELD}px receptive field"
        )
    with torch.no_grad():
        score = model.discriminator(to_tensor(image))
    return float(score.item())


def discriminator_score_map(model: ScaleModel, image: np.ndarray) -> np.ndarray:
    """Raw (H, W) patch score map, mainly for inspection and tests."""
    image = as_image_grid(image)
    with torch.no_grad():
        out = model.discriminator.score_map(to_tensor(image))
    return out.numpy()[0, 0]


# ---------------------------------------------------------------------------
# Flat parameter enumeration (stable order, used by serialization)
# ---------------------------------------------------------------------------

def parameter_order(module: nn.Module) -> list[tuple[str, tuple[int, ...]]]:
    return [(name, tuple(p.shape)) for name, p in module.named_parameters()]


def export_params(module: nn.Module) -> np.ndarray:
    """All trainable parameters flattened to one float32 vector."""
    parts = [
        p.detach().cpu().numpy().astype(np.float32, copy=False).ravel()
        for _, p in module.named_parameters()
    ]
    if not parts:
        return np.zeros(0, dtype=np.float32)
    return np.concatenate(parts)


def import_params(module: nn.Module, flat: np.ndarray) -> None:
    """Inverse of export_params; the vector length must match exactly."""
    flat = np.asarray(flat, dtype=np.float32)
    total = sum(p.numel() for _, p in module.named_parameters())
    if flat.ndim != 1 or flat.size != total:
        raise ModelError(f"parameter vector has {flat.size} scalars, expected {total}")
    offset = 0
    with torch.no_grad():
        for _, p in module.named_parameters():
            n = p.numel()
            chunk = flat[offset : offset + n].reshape(tuple(p.shape))
            p.copy_(torch.from_numpy(chunk.copy()))
            offset += n
