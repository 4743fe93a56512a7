"""Coarse-to-fine generation and mid-pyramid injection from a bundle.

Everything here is read-only over a TrainedBundle and deterministic in
the request seed, so concurrent calls and repeated calls are safe and
byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .bundle_protocol.format import TrainedBundle, load_scale_model
from .gan_models import generator_forward
from .pyramid import as_image_grid, resize_image, round_half_up, upscale


class ScaleUnavailable(LookupError):
    """The bundle does not (yet) contain the requested scale."""

    code = "scale_unavailable"


class RequestError(ValueError):
    """Malformed generation request."""


@dataclass(frozen=True)
class NoiseMap:
    """Reproducible Gaussian field: (seed, dims, amplitude) -> values."""

    dims: tuple[int, int]
    seed: int
    stream: int
    amplitude: float

    @property
    def values(self) -> np.ndarray:
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, self.stream]))
        )
        field = rng.standard_normal((self.dims[0], self.dims[1], 3))
        return (self.amplitude * field).astype(np.float32)


@dataclass(frozen=True)
class GenerationRequest:
    up_to_scale: int
    target_dims: tuple[int, int] | None = None
    seed: int = 0
    inject: tuple[np.ndarray, int] | None = None


def chain_dims(base: tuple[int, int], factor: float, count: int) -> list[tuple[int, int]]:
    """Per-scale dims grown geometrically from the coarsest target.

    Each entry is rounded from the base dims, not from the previous
    entry, so rounding error never compounds.
    """
    return [
        (
            max(1, round_half_up(base[0] * factor**i)),
            max(1, round_half_up(base[1] * factor**i)),
        )
        for i in range(count)
    ]


def _require_scales(bundle: TrainedBundle, up_to_scale: int) -> None:
    available = bundle.scale_count_available
    if up_to_scale >= available:
        raise ScaleUnavailable(
            f"scale unavailable: requested {up_to_scale}, bundle holds 0..{available - 1}"
        )
    if up_to_scale < 0:
        raise RequestError("up_to_scale must be >= 0")


def _run_chain(
    bundle: TrainedBundle,
    dims: list[tuple[int, int]],
    up_to_scale: int,
    seed: int,
    inject_image: np.ndarray | None = None,
    inject_at: int | None = None,
) -> np.ndarray:
    torch.set_num_threads(1)
    if inject_at is None:
        model = load_scale_model(bundle, 0)
        noise = NoiseMap(dims[0], seed, 0, model.noise_amplitude).values
        y = generator_forward(model, noise)
        start = 1
    else:
        model = load_scale_model(bundle, inject_at)
        coarse = resize_image(as_image_grid(inject_image), dims[inject_at])
        noise = NoiseMap(dims[inject_at], seed, inject_at, model.noise_amplitude).values
        y = generator_forward(model, noise, coarse)
        start = inject_at + 1
    for i in range(start, up_to_scale + 1):
        model = load_scale_model(bundle, i)
        coarse = upscale(y, dims[i])
        noise = NoiseMap(dims[i], seed, i, model.noise_amplitude).values
        y = generator_forward(model, noise, coarse)
    return y


def generate(bundle: TrainedBundle, request: GenerationRequest) -> np.ndarray:
    """Sample an image through generators 0..up_to_scale.

    The coarsest noise dims default to the bundle's own coarsest dims;
    any other (height, width) works and the output grows by the bundle
    factor per scale. With ``request.inject`` set, the chain starts at
    the injection scale from the provided image instead of scale 0.
    """
    _require_scales(bundle, request.up_to_scale)
    schedule = bundle.manifest.schedule

    if request.inject is not None:
        image, at_scale = request.inject
        if not 1 <= at_scale <= request.up_to_scale:
            raise RequestError(
                f"inject scale {at_scale} must lie in [1, up_to_scale={request.up_to_scale}]"
            )
        if request.target_dims is not None:
            raise RequestError("injection uses the bundle's own dims; target_dims must be unset")
        dims = list(schedule.dims)
        return _run_chain(
            bundle, dims, request.up_to_scale, request.seed,
            inject_image=image, inject_at=at_scale,
        )

    base = request.target_dims if request.target_dims is not None else schedule.dims[0]
    if base[0] < 1 or base[1] < 1:
        raise RequestError(f"bad coarsest target dims {base}")
    dims = chain_dims(tuple(base), schedule.factor, request.up_to_scale + 1)
    return _run_chain(bundle, dims, request.up_to_scale, request.seed)


def inject(
    bundle: TrainedBundle,
    image: np.ndarray,
    at_scale: int,
    up_to_scale: int,
    seed: int = 0,
) -> np.ndarray:
    """Insert an external image at a pyramid scale and refine it upward.

    The image is resampled to the bundle's dims at ``at_scale`` and takes
    the place of the upscaled coarser-scale output there; remaining scales
    refine it with fresh noise at the bundle's own dims.
    """
    if at_scale < 1:
        raise RequestError("at_scale must be >= 1 (scale 0 has no coarse input)")
    if at_scale > up_to_scale:
        raise RequestError(f"at_scale {at_scale} exceeds up_to_scale {up_to_scale}")
    return generate(
        bundle,
        GenerationRequest(up_to_scale=up_to_scale, seed=seed, inject=(image, at_scale)),
    )
