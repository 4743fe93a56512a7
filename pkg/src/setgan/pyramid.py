"""Scale schedules and image pyramids.

Images are exchanged as float32 arrays of shape (height, width, 3) with
values in [-1, 1] ("image grids"). The schedule is a geometric chain of
per-scale dimensions, coarsest first, shared by training, inference and
model delivery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image


class PyramidError(ValueError):
    """Invalid geometry or image input."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _scaled_dims(dims: tuple[int, int], factor: float) -> tuple[int, int]:
    # Round-half-up per axis, clamped to >= 1.
    return (
        max(1, round_half_up(dims[0] * factor)),
        max(1, round_half_up(dims[1] * factor)),
    )


# ---------------------------------------------------------------------------
# Image grids
# ---------------------------------------------------------------------------

def as_image_grid(arr: np.ndarray) -> np.ndarray:
    """Validate an array as an image grid and return it as float32.

    Raises PyramidError if the shape is not (H, W, 3) with H, W >= 1 or if
    any value falls outside [-1, 1].
    """
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise PyramidError(f"expected (H, W, 3) image grid, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise PyramidError("image grid contains non-finite values")
    if arr.min() < -1.0 or arr.max() > 1.0:
        raise PyramidError("image grid values must lie in [-1, 1]")
    return arr


def grid_dims(image: np.ndarray) -> tuple[int, int]:
    return int(image.shape[0]), int(image.shape[1])


def load_image(path) -> np.ndarray:
    """Load a PNG or JPEG file as a normalized image grid."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32)
    return (arr / 127.5 - 1.0).astype(np.float32)


def save_image(path, image: np.ndarray, format: str | None = None) -> None:
    """Write an image grid as an 8-bit PNG (or JPEG, by extension).

    ``format`` must be given when writing to a file object instead of a
    named path.
    """
    image = as_image_grid(image)
    bytes_ = np.clip(np.rint((image + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Image.fromarray(bytes_, mode="RGB").save(path, format=format)


# ---------------------------------------------------------------------------
# Scale schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScaleSchedule:
    """Geometric pyramid plan: per-scale (height, width), coarsest first."""

    scale_count: int
    factor: float
    dims: tuple[tuple[int, int], ...]
    min_dim: int
    max_dim: int

    def __post_init__(self):
        if self.scale_count != len(self.dims) or self.scale_count < 1:
            raise PyramidError("scale_count must match the dims list")
        if self.factor <= 1.0 and self.scale_count > 1:
            raise PyramidError("factor must exceed 1 for multi-scale schedules")
        for lo, hi in zip(self.dims, self.dims[1:]):
            if not (lo[0] < hi[0] and lo[1] < hi[1]):
                raise PyramidError(
                    f"schedule degenerate: dims must increase strictly, got {lo} -> {hi}"
                )


def compute_scale_schedule(
    input_dims: tuple[int, int],
    max_dim: int,
    min_dim: int = 25,
    r_target: float = 4.0 / 3.0,
) -> ScaleSchedule:
    """Plan the pyramid for an input of the given (height, width).

    The input is first resized so its larger side equals ``max_dim`` (aspect
    preserved). The scale count is chosen so the geometric step between
    consecutive scales is as close as possible to ``r_target``; the factor is
    then recomputed so the chain lands exactly on both endpoints, i.e. the
    smaller side of the coarsest scale equals ``min_dim``.
    """
    if not (max_dim >= min_dim >= 1):
        raise PyramidError("require max_dim >= min_dim >= 1")
    if not r_target > 1.0:
        raise PyramidError("require r_target > 1")
    h, w = input_dims
    if h < 1 or w < 1:
        raise PyramidError("empty input image")

    final = _scaled_dims((h, w), max_dim / max(h, w))
    # The larger side must land exactly on max_dim regardless of rounding.
    final = (max_dim, final[1]) if h >= w else (final[0], max_dim)
    small_side = min(final)
    if small_side < min_dim:
        raise PyramidError(
            f"image too small: resized dims {final} fall below min_dim {min_dim}"
        )

    steps = round_half_up(math.log(small_side / min_dim) / math.log(r_target))
    if steps <= 0:
        return ScaleSchedule(1, r_target, (final,), min_dim, max_dim)

    ratio = small_side / min_dim
    factor = ratio ** (1.0 / steps)
    count = steps + 1
    # Single pow per level: compounding factor**-k drifts off exact
    # half-integer boundaries (e.g. a true 37.5 must round to 38).
    dims = tuple(
        _scaled_dims(final, ratio ** ((i - steps) / steps)) for i in range(count)
    )
    return ScaleSchedule(count, factor, dims, min_dim, max_dim)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _pil_resize(image: np.ndarray, dims: tuple[int, int], resample) -> np.ndarray:
    h, w = dims
    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(image[..., c]), mode="F").resize(
                (w, h), resample
            )
        )
        for c in range(3)
    ]
    return np.stack(channels, axis=-1)


def resize_image(image: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Resample to exact target dims with an antialiased bicubic filter.

    Bicubic ringing can overshoot the value range, so the result is clamped
    back to [-1, 1].
    """
    image = as_image_grid(image)
    if grid_dims(image) == tuple(dims):
        return image.copy()
    out = _pil_resize(image, dims, Image.Resampling.BICUBIC)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def upscale(image: np.ndarray, target_dims: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling to exact target dims; shrinking is rejected."""
    image = as_image_grid(image)
    h, w = grid_dims(image)
    th, tw = target_dims
    if th < h or tw < w:
        raise PyramidError(f"upscale cannot shrink: {h}x{w} -> {th}x{tw}")
    if (th, tw) == (h, w):
        return image.copy()
    out = _pil_resize(image, (th, tw), Image.Resampling.BILINEAR)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# Pyramid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImagePyramid:
    schedule: ScaleSchedule
    levels: tuple[np.ndarray, ...]

    def level_dims(self, index: int) -> tuple[int, int]:
        return self.schedule.dims[index]


def build_pyramid(image: np.ndarray, schedule: ScaleSchedule) -> ImagePyramid:
    """Downsample the source to every scheduled scale.

    Every level is produced from the full-resolution source (not from the
    previous level) so resampling error does not compound down the chain.
    """
    image = as_image_grid(image)
    if grid_dims(image) != schedule.dims[-1]:
        raise PyramidError(
            f"image dims {grid_dims(image)} do not match the finest scheduled "
            f"dims {schedule.dims[-1]}"
        )
    levels = tuple(resize_image(image, d) for d in schedule.dims[:-1]) + (image.copy(),)
    return ImagePyramid(schedule, levels)
