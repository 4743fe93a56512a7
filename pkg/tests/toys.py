"""Shared toy inputs sized so the full suite stays inside a laptop budget."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from setgan.trainer import TrainConfig

# 5-scale ladder, coarsest 32px: two channel bands (scales 0-3 and 4).
TOY_SEED = 11
TOY_CONFIG_FIELDS = dict(
    iterations_per_scale=100,
    min_dim=32,
    max_dim=64,
    r_target=2.0 ** 0.25,
    ssim_threshold=1.01,
    seed=TOY_SEED,
)

# 4-scale ladder, all in the first channel band; long enough to converge.
CONVERGENCE_CONFIG_FIELDS = dict(
    iterations_per_scale=500,
    min_dim=25,
    max_dim=64,
    r_target=4.0 / 3.0,
    ssim_threshold=1.01,
    worker_count=1,
    seed=TOY_SEED,
)

# 3 scales at 27/36/48px; with 2 iterations a run takes about a second.
MINI_CONFIG_FIELDS = dict(
    iterations_per_scale=2,
    min_dim=27,
    max_dim=48,
    r_target=4.0 / 3.0,
    worker_count=1,
    ssim_threshold=1.01,
    seed=3,
)


def toy_texture(dims: tuple[int, int] = (64, 64), seed: int = 9) -> np.ndarray:
    """Deterministic quasi-periodic texture with stochastic color blobs.

    Oriented interference stripes give structure a patch discriminator can
    learn quickly; the image-period swell keeps the coarse pyramid levels
    far from gray so reconstruction has real signal at every scale; the
    smoothed noise keeps patches from being identical. tanh compression
    bounds the range without flattening typical contrast.
    """
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    stripes = np.sin(0.35 * xx + 2.1 * np.sin(0.12 * yy)) + 0.6 * np.cos(
        0.5 * yy - 1.3 * np.sin(0.08 * xx)
    )
    swell = 0.9 * np.sin(2 * np.pi * yy / h + 0.7) * np.cos(2 * np.pi * xx / w - 0.4)
    rng = np.random.default_rng(seed)
    blobs = np.stack(
        [gaussian_filter(rng.normal(0.0, 1.0, (h, w)), sigma=1.5) for _ in range(3)],
        axis=-1,
    )
    raw = (
        stripes[..., None] * np.array([0.7, 0.5, 0.3])
        + swell[..., None] * np.array([0.55, -0.65, 0.5])
        + blobs
    )
    return np.tanh(1.1 * raw).astype(np.float32)


def toy_config(worker_count: int) -> TrainConfig:
    return TrainConfig(worker_count=worker_count, **TOY_CONFIG_FIELDS)


def convergence_config() -> TrainConfig:
    return TrainConfig(**CONVERGENCE_CONFIG_FIELDS)


def mini_config(**overrides) -> TrainConfig:
    fields = dict(MINI_CONFIG_FIELDS)
    fields.update(overrides)
    return TrainConfig(**fields)


def mini_image(seed: int = 7, dims: tuple[int, int] = (48, 48)) -> np.ndarray:
    return toy_texture(dims, seed=seed)
