"""Image-manipulation applications on top of the generator pyramid.

All four apps are pure functions of (bundle, inputs, seed). The masked
apps (harmonize, edit) only ever change pixels inside the dilated mask;
everything outside is copied from the input composite byte-for-byte.
"""

from __future__ import annotations

import logging

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation

from .bundle_protocol.format import TrainedBundle, load_scale_model
from .gan_models import generator_forward
from .inference import NoiseMap, inject
from .pyramid import as_image_grid, grid_dims, round_half_up, upscale

log = logging.getLogger(__name__)

MASK_DILATION_RADIUS = 8
PAINT_RECOMMENDED_SCALES = (1, 2)
EDIT_SCALE_RANGE = (1, 4)
EDIT_RECOMMENDED_SCALES = (2, 3)


class EditError(ValueError):
    """Edit request outside an application's contract."""


def load_mask(path) -> np.ndarray:
    """Read a single-channel mask image; nonzero marks the editable region."""
    with Image.open(path) as im:
        plane = np.asarray(im.convert("L"))
    return plane > 0


def _as_mask(mask: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask.any(axis=2)
    if mask.shape != dims:
        raise EditError(f"mask dims {mask.shape} do not match image dims {dims}")
    return mask.astype(bool)


def _disk(radius: int) -> np.ndarray:
    coords = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return (yy * yy + xx * xx) <= radius * radius


def dilate_mask(mask: np.ndarray, radius: int = MASK_DILATION_RADIUS) -> np.ndarray:
    if radius <= 0 or not mask.any():
        return mask.copy()
    return binary_dilation(mask, structure=_disk(radius))


def _finest_scale(bundle: TrainedBundle) -> int:
    if bundle.scale_count_available == 0:
        raise EditError("bundle holds no scales")
    return bundle.scale_count_available - 1


# ---------------------------------------------------------------------------
# Super-resolution
# ---------------------------------------------------------------------------

def super_resolution(
    bundle: TrainedBundle, low_res: np.ndarray, s: float, k: int, seed: int = 0
) -> np.ndarray:
    """Upscale by a total factor s through k passes of the finest generator.

    The bundle's scale factor must satisfy r == s^(1/k) within 1%, so that
    each pass re-adds detail at exactly the grain the generator learned.
    Each pass upscales to round(input_dims * r^t) from the original dims,
    so the final dims are exactly round(s * input_dims).
    """
    if s <= 1.0:
        raise EditError("super-resolution factor s must exceed 1")
    if k < 1:
        raise EditError("pass count k must be >= 1")
    required = s ** (1.0 / k)
    r = bundle.manifest.schedule.factor
    if abs(r - required) > 0.01 * required:
        raise EditError(
            f"bundle factor r={r:.6f} does not match required s^(1/k)={required:.6f} "
            f"for s={s}, k={k} (tolerance 1%)"
        )
    low_res = as_image_grid(low_res)
    h0, w0 = grid_dims(low_res)
    finest = _finest_scale(bundle)

    model = load_scale_model(bundle, finest)
    y = low_res
    for t in range(1, k + 1):
        dims_t = (round_half_up(h0 * required**t), round_half_up(w0 * required**t))
        coarse = upscale(y, dims_t)
        noise = NoiseMap(dims_t, seed, finest + 1 + t, model.noise_amplitude).values
        y = generator_forward(model, noise, coarse)
    return y


# ---------------------------------------------------------------------------
# Paint-to-image
# ---------------------------------------------------------------------------

def paint2image(
    bundle: TrainedBundle, clipart: np.ndarray, at_scale: int = 1, seed: int = 0
) -> np.ndarray:
    """Turn a flat paint layout into texture by injecting it at a coarse scale."""
    finest = _finest_scale(bundle)
    if finest < 1:
        raise EditError("paint2image needs a bundle with at least two scales")
    clamped = min(max(at_scale, 1), finest)
    if clamped != at_scale:
        log.warning("paint2image scale %d out of range, clamped to %d", at_scale, clamped)
    elif at_scale not in PAINT_RECOMMENDED_SCALES:
        log.warning(
            "paint2image scale %d is outside the recommended scales %s",
            at_scale, PAINT_RECOMMENDED_SCALES,
        )
    return inject(bundle, clipart, clamped, finest, seed)


# ---------------------------------------------------------------------------
# Masked apps: harmonization and editing
# ---------------------------------------------------------------------------

def _masked_inject(
    bundle: TrainedBundle, base: np.ndarray, mask: np.ndarray, at_scale: int, seed: int
) -> np.ndarray:
    finest = _finest_scale(bundle)
    base = as_image_grid(base)
    dims = grid_dims(base)
    expected = bundle.manifest.schedule.dims[finest]
    if dims != expected:
        raise EditError(
            f"image dims {dims} must match the finest available scale dims {expected}"
        )
    mask = _as_mask(mask, dims)
    generated = inject(bundle, base, at_scale, finest, seed)
    region = dilate_mask(mask)
    return np.where(region[..., None], generated, base).astype(np.float32)


def harmonize(
    bundle: TrainedBundle,
    composite: np.ndarray,
    mask: np.ndarray,
    at_scale: int | None = None,
    seed: int = 0,
) -> np.ndarray:
    """Blend a pasted object into the scene's learned texture.

    Injection must happen at one of the three finest scales, which keep
    the object's structure while restyling its surface. Pixels outside
    the dilated mask are returned untouched.
    """
    finest = _finest_scale(bundle)
    allowed = [i for i in (finest - 2, finest - 1, finest) if i >= 1]
    if not allowed:
        raise EditError("harmonize needs a bundle with at least two scales")
    if at_scale is None:
        at_scale = allowed[0]
    if at_scale not in allowed:
        raise EditError(f"harmonize scale {at_scale} must be one of {allowed}")
    return _masked_inject(bundle, composite, mask, at_scale, seed)


def edit(
    bundle: TrainedBundle,
    edited: np.ndarray,
    mask: np.ndarray,
    at_scale: int = 2,
    seed: int = 0,
) -> np.ndarray:
    """Regenerate a locally modified region so seams take the learned texture.

    Same masking contract as harmonize, but injected at a coarse-mid
    scale where patch statistics dominate over global structure.
    """
    finest = _finest_scale(bundle)
    lo, hi = EDIT_SCALE_RANGE
    hi = min(hi, finest)
    if hi < lo:
        raise EditError("edit needs a bundle with at least two scales")
    if not lo <= at_scale <= hi:
        raise EditError(f"edit scale {at_scale} must lie in [{lo}, {hi}]")
    if at_scale not in EDIT_RECOMMENDED_SCALES:
        log.warning(
            "edit scale %d is outside the recommended scales %s",
            at_scale, EDIT_RECOMMENDED_SCALES,
        )
    return _masked_inject(bundle, edited, mask, at_scale, seed)
