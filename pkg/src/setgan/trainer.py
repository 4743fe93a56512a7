"""Per-scale adversarial training and the parallel job orchestrator.

Every scale trains independently against the real image pyramid: the
coarse input at scale i is the real upscaled level i-1, never another
scale's generator output, which is what makes the scales safe to train
concurrently. Randomness is drawn from a per-scale stream seeded by
(config.seed, scale_index), so results do not depend on scheduling or
worker count.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .bundle_protocol.format import (
    TrainedBundle,
    build_bundle,
    derive_job_id,
    source_image_hash,
)
from .gan_models import (
    ScaleModel,
    build_discriminator,
    build_generator,
    gaussian_field,
    generator_forward,
    to_tensor,
)
from .metrics import (
    adversarial_loss,
    exit_score,
    gradient_penalty_term,
    reconstruction_loss_term,
)
from .pyramid import (
    ImagePyramid,
    as_image_grid,
    build_pyramid,
    compute_scale_schedule,
    grid_dims,
    resize_image,
    upscale,
)

log = logging.getLogger(__name__)

MODE_BASELINE_SERIAL = "baseline_serial"
MODE_PARALLEL_ONESHOT = "parallel_oneshot"
MODE_PROGRESSIVE = "progressive"
DELIVERY_MODES = (MODE_BASELINE_SERIAL, MODE_PARALLEL_ONESHOT, MODE_PROGRESSIVE)


class TrainingDiverged(RuntimeError):
    """A loss went non-finite; the scale was aborted."""

    def __init__(self, scale_index: int, iteration: int, message: str):
        super().__init__(f"scale {scale_index} diverged at iteration {iteration}: {message}")
        self.scale_index = scale_index
        self.iteration = iteration


class ScaleCancelled(Exception):
    """Internal control flow: a sibling scale satisfied the exit threshold."""

    def __init__(self, scale_index: int):
        super().__init__(f"scale {scale_index} cancelled")
        self.scale_index = scale_index


class TrainingJobFailed(RuntimeError):
    """A scale failed after retry; completed scale models are preserved."""

    def __init__(self, message: str, partial_models: dict, cause: BaseException | None):
        super().__init__(message)
        self.partial_models = partial_models
        self.cause = cause


@dataclass(frozen=True)
class TrainConfig:
    iterations_per_scale: int = 2000
    g_steps: int = 3
    d_steps: int = 3
    learning_rate: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_after: int = 1600
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    alpha_rec: float = 10.0
    gp_weight: float = 0.1
    ssim_threshold: float = 1.01
    worker_count: int = 4
    seed: int = 0
    max_dim: int = 256
    min_dim: int = 25
    r_target: float = 4.0 / 3.0

    def __post_init__(self):
        if self.iterations_per_scale < 0:
            raise ValueError("iterations_per_scale must be >= 0")
        for name in ("g_steps", "d_steps", "worker_count", "lr_decay_after", "max_dim", "min_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("learning_rate", "lr_decay_factor", "r_target"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.alpha_rec < 0 or self.gp_weight < 0:
            raise ValueError("alpha_rec and gp_weight must be >= 0")
        if not 0.0 <= self.ssim_threshold <= 1.01:
            raise ValueError("ssim_threshold must lie in [0, 1.01]")

    def job_fields(self) -> dict:
        """Config fields that shape the trained bytes (worker count does not)."""
        fields = asdict(self)
        fields.pop("worker_count")
        return fields


def lr_at(config: TrainConfig, iteration: int) -> float:
    if iteration >= config.lr_decay_after:
        return config.learning_rate * config.lr_decay_factor
    return config.learning_rate


@dataclass
class TrainingResult:
    bundle: TrainedBundle
    best_scale: int
    per_scale_ssim: list
    per_scale_wall_time: list
    per_scale_state: list
    pyramid: ImagePyramid
    models: list


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def train_scale(
    pyramid: ImagePyramid,
    scale_index: int,
    config: TrainConfig,
    cancel_event: threading.Event | None = None,
    telemetry_sink=None,
) -> ScaleModel:
    """Train one scale to completion and return its model.

    The draw order from the per-scale stream is frozen: generator init,
    discriminator init, reconstruction seed, then per iteration d_steps
    pairs of (noise, epsilon) followed by g_steps noise fields. Changing
    it breaks reproducibility of published bundles.
    """
    torch.set_num_threads(1)
    schedule = pyramid.schedule
    if not 0 <= scale_index < schedule.scale_count:
        raise ValueError(f"scale_index {scale_index} outside schedule 0..{schedule.scale_count - 1}")
    if cancel_event is not None and cancel_event.is_set():
        raise ScaleCancelled(scale_index)

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, scale_index])))
    gen = build_generator(scale_index, rng)
    disc = build_discriminator(scale_index, rng)
    fixed_rec_seed = int(rng.integers(0, 2**63))

    target = pyramid.levels[scale_index]
    h, w = grid_dims(target)
    if scale_index == 0:
        amplitude = 1.0
        coarse_t = None
        rec_noise = gaussian_field((h, w), fixed_rec_seed, amplitude)
    else:
        coarse = upscale(pyramid.levels[scale_index - 1], (h, w))
        diff = coarse.astype(np.float64) - target.astype(np.float64)
        amplitude = float(np.sqrt(np.mean(diff * diff)))
        coarse_t = to_tensor(coarse)
        rec_noise = np.zeros((h, w, 3), dtype=np.float32)
    rec_noise_t = to_tensor(rec_noise)
    target_t = to_tensor(target)

    model = ScaleModel(
        scale_index=scale_index,
        generator=gen,
        discriminator=disc,
        noise_amplitude=amplitude,
        fixed_rec_seed=fixed_rec_seed,
    )
    opt_d = torch.optim.Adam(
        disc.parameters(), lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2)
    )
    opt_g = torch.optim.Adam(
        gen.parameters(), lr=config.learning_rate, betas=(config.adam_beta1, config.adam_beta2)
    )

    def fresh_noise() -> torch.Tensor:
        z = amplitude * rng.standard_normal((h, w, 3))
        return to_tensor(z.astype(np.float32))

    for iteration in range(config.iterations_per_scale):
        if cancel_event is not None and cancel_event.is_set():
            raise ScaleCancelled(scale_index)
        started = time.perf_counter()
        lr = lr_at(config, iteration)
        _set_lr(opt_d, lr)
        _set_lr(opt_g, lr)

        d_loss_val = g_loss_val = rec_val = 0.0
        for _ in range(config.d_steps):
            noise_t = fresh_noise()
            eps = float(rng.uniform())
            with torch.no_grad():
                fake = gen(noise_t, coarse_t)
            d_real = disc(target_t).mean()
            d_fake = disc(fake).mean()
            gp = gradient_penalty_term(disc, target_t, fake, eps)
            _, d_loss = adversarial_loss(d_real, d_fake, gp, config.gp_weight)
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()
            d_loss_val = float(d_loss.detach())

        for _ in range(config.g_steps):
            noise_t = fresh_noise()
            fake = gen(noise_t, coarse_t)
            adv = -disc(fake).mean()
            rec = reconstruction_loss_term(gen, rec_noise_t, coarse_t, target_t)
            g_loss = adv + config.alpha_rec * rec
            opt_g.zero_grad(set_to_none=True)
            g_loss.backward()
            opt_g.step()
            g_loss_val = float(g_loss.detach())
            rec_val = float(rec.detach())

        if not (math.isfinite(d_loss_val) and math.isfinite(g_loss_val) and math.isfinite(rec_val)):
            raise TrainingDiverged(
                scale_index, iteration, f"d={d_loss_val} g={g_loss_val} rec={rec_val}"
            )
        record = {
            "scale": scale_index,
            "iteration": iteration,
            "d_loss": d_loss_val,
            "g_loss": g_loss_val,
            "rec_loss": rec_val,
            "lr": lr,
            "wall_ms": (time.perf_counter() - started) * 1000.0,
        }
        model.training_history.append(record)
        if telemetry_sink is not None:
            telemetry_sink(record)
    return model


def evaluate_exit(model: ScaleModel, pyramid: ImagePyramid, threshold: float):
    """Anchored-sample SSIM against the full-resolution source.

    Returns (ssim_value clamped to [0, 1], exit flag). The sample is the
    reconstruction-path output (fixed seed at the coarsest scale, zero
    noise above it) so the score reflects what training anchored.
    """
    i = model.scale_index
    target = pyramid.levels[i]
    h, w = grid_dims(target)
    if i == 0:
        noise = gaussian_field((h, w), model.fixed_rec_seed, model.noise_amplitude)
        coarse = None
    else:
        coarse = upscale(pyramid.levels[i - 1], (h, w))
        noise = np.zeros((h, w, 3), dtype=np.float32)
    fake = generator_forward(model, noise, coarse)
    source = pyramid.levels[-1]
    value = exit_score(upscale(fake, grid_dims(source)), source)
    return value, value >= threshold


def train_all_parallel(
    image: np.ndarray,
    config: TrainConfig,
    mode: str = MODE_PARALLEL_ONESHOT,
    on_scale_state=None,
    telemetry_sink=None,
) -> TrainingResult:
    """Train every scale of one image and select the exit scale.

    ``mode`` controls scheduling only, never the trained bytes:
    baseline_serial runs scales in order on one worker; parallel_oneshot
    runs them concurrently and cancels scales above the first satisfied
    one; progressive runs them all concurrently to completion.

    ``on_scale_state(scale_index, state, payload)`` fires on transitions
    to running/done/cancelled/failed; "done" payloads carry ssim and
    wall_time so callers can publish scales as they land.
    """
    if mode not in DELIVERY_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {DELIVERY_MODES}")
    torch.set_num_threads(1)
    image = as_image_grid(image)
    schedule = compute_scale_schedule(grid_dims(image), config.max_dim, config.min_dim, config.r_target)
    source = resize_image(image, schedule.dims[-1])
    pyramid = build_pyramid(source, schedule)
    scale_count = schedule.scale_count

    cancel_above_exit = mode == MODE_PARALLEL_ONESHOT
    workers = 1 if mode == MODE_BASELINE_SERIAL else max(1, config.worker_count)

    lock = threading.Lock()
    states = ["pending"] * scale_count
    models: list = [None] * scale_count
    ssims: list = [None] * scale_count
    walls: list = [None] * scale_count
    cancel_events = [threading.Event() for _ in range(scale_count)]

    def notify(index: int, state: str, payload: dict | None = None):
        if on_scale_state is not None:
            on_scale_state(index, state, payload or {})

    def run_scale(index: int):
        with lock:
            if cancel_events[index].is_set():
                states[index] = "cancelled"
                raise ScaleCancelled(index)
            states[index] = "running"
        notify(index, "running")
        started = time.perf_counter()
        attempts = 0
        while True:
            try:
                model = train_scale(
                    pyramid, index, config,
                    cancel_event=cancel_events[index],
                    telemetry_sink=telemetry_sink,
                )
                break
            except ScaleCancelled:
                with lock:
                    states[index] = "cancelled"
                notify(index, "cancelled")
                raise
            except TrainingDiverged:
                # Deterministic modeling failure; retrying replays it.
                with lock:
                    states[index] = "failed"
                notify(index, "failed")
                raise
            except Exception:
                attempts += 1
                if attempts > 1:
                    with lock:
                        states[index] = "failed"
                    notify(index, "failed")
                    raise
                log.warning("scale %d worker failed, retrying once", index, exc_info=True)
        wall = time.perf_counter() - started
        value, exited = evaluate_exit(model, pyramid, config.ssim_threshold)
        with lock:
            models[index] = model
            ssims[index] = value
            walls[index] = wall
            states[index] = "done"
            if exited and cancel_above_exit:
                satisfied = [i for i, v in enumerate(ssims) if v is not None and v >= config.ssim_threshold]
                for j in range(min(satisfied) + 1, scale_count):
                    cancel_events[j].set()
        notify(index, "done", {"ssim": value, "wall_time": wall, "exit": exited, "model": model})

    failure: BaseException | None = None
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures: list[Future] = [pool.submit(run_scale, i) for i in range(scale_count)]
        for fut in futures:
            try:
                fut.result()
            except ScaleCancelled:
                continue
            except BaseException as exc:
                if failure is None:
                    failure = exc
                    for ev in cancel_events:
                        ev.set()
    if failure is not None:
        partial = {i: m for i, m in enumerate(models) if m is not None}
        raise TrainingJobFailed(
            f"training failed: {failure}", partial_models=partial, cause=failure
        )

    best_scale = scale_count - 1
    for i, value in enumerate(ssims):
        if value is not None and value >= config.ssim_threshold:
            best_scale = i
            break

    source_hash = source_image_hash(source)
    # One-shot delivery prunes to the exit prefix; the other modes keep
    # every trained scale (serial ships everything, progressive streamed
    # everything before the job completed).
    if mode == MODE_PARALLEL_ONESHOT:
        bundle_models = [models[i] for i in range(best_scale + 1)]
    else:
        bundle_models = list(models)
    if any(m is None for m in bundle_models):
        raise TrainingJobFailed(
            "internal: exit-scale prefix incomplete",
            partial_models={i: m for i, m in enumerate(models) if m is not None},
            cause=None,
        )
    bundle = build_bundle(
        bundle_models,
        schedule,
        source_hash,
        threshold=config.ssim_threshold,
        seed=config.seed,
        best_scale=best_scale,
        job_id=derive_job_id(source_hash, config.job_fields()),
    )
    return TrainingResult(
        bundle=bundle,
        best_scale=best_scale,
        per_scale_ssim=ssims,
        per_scale_wall_time=walls,
        per_scale_state=states,
        pyramid=pyramid,
        models=models,
    )
