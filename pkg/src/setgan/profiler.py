"""Power traces and energy-delay product accounting for inference.

EDP is average power times the square of the elapsed time. Traces are
piecewise-constant: a sample's power holds until the next sample (the
last one holds to the end of the window). When no hardware sensor is
present, a synthetic model prices each scale by its multiply-accumulate
count over a constant idle floor; its time base is the model's own
(work / throughput), not the wall clock, so reported curves are stable
across machines.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass

from .bundle_protocol.format import TrainedBundle
from .gan_models import channels_for_scale
from .inference import GenerationRequest, chain_dims, generate

SOURCE_FILE = "file"
SOURCE_SYNTHETIC = "synthetic_model"
SOURCE_SENSOR = "platform_sensor"

# Synthetic model constants: watts = idle + per-gigamac rate; seconds = macs/throughput.
IDLE_WATTS = 2.5
WATTS_PER_GMAC = 0.6
MACS_PER_SECOND = 2.0e9

# Documented sensor location (microwatts), present on boards that expose
# a power rail through the power-supply class.
SENSOR_PATH = "/sys/class/power_supply/BAT0/power_now"


class ProfilerError(ValueError):
    """Invalid trace or profiling request."""


@dataclass(frozen=True)
class PowerTrace:
    samples: tuple[tuple[float, float], ...]
    source: str

    def __post_init__(self):
        if not self.samples:
            raise ProfilerError("empty power trace")
        last = None
        for t, p in self.samples:
            if p < 0:
                raise ProfilerError(f"negative power {p} at t={t}")
            if last is not None and t <= last:
                raise ProfilerError("trace timestamps must increase strictly")
            last = t


@dataclass(frozen=True)
class ScaleEnergy:
    up_to_scale: int
    wall_time: float
    model_time: float
    avg_power: float
    edp: float


@dataclass(frozen=True)
class EnergyReport:
    entries: tuple[ScaleEnergy, ...]
    normalized_edp: tuple[float, ...]
    source: str


def average_power(trace: PowerTrace, duration: float) -> float:
    """Time-weighted mean power of the trace over [0, duration]."""
    if duration <= 0:
        raise ProfilerError("duration must be > 0")
    if trace.samples[0][0] > 0:
        raise ProfilerError("trace must start at or before t=0")
    energy = 0.0
    for (t, p), nxt in zip(trace.samples, list(trace.samples[1:]) + [None]):
        start = max(t, 0.0)
        end = duration if nxt is None else min(nxt[0], duration)
        if end > start:
            energy += p * (end - start)
    return energy / duration


def edp(trace: PowerTrace, duration: float) -> float:
    """Energy-delay product: average power times duration squared."""
    return average_power(trace, duration) * duration * duration


def edp_summation(trace: PowerTrace, duration: float) -> float:
    """Cross-check form: sum of P * dt over segments, times the duration."""
    if duration <= 0:
        raise ProfilerError("duration must be > 0")
    if trace.samples[0][0] > 0:
        raise ProfilerError("trace must start at or before t=0")
    total = 0.0
    for (t, p), nxt in zip(trace.samples, list(trace.samples[1:]) + [None]):
        start = max(t, 0.0)
        end = duration if nxt is None else min(nxt[0], duration)
        if end > start:
            total += p * (end - start)
    return total * duration


def normalize_edp(values) -> tuple[float, ...]:
    """Scale an EDP series so the last (full-pyramid) entry is 1.0. Idempotent."""
    values = tuple(float(v) for v in values)
    if not values:
        raise ProfilerError("nothing to normalize")
    full = values[-1]
    if full <= 0:
        raise ProfilerError("full-scale EDP must be positive")
    return tuple(v / full for v in values)


# ---------------------------------------------------------------------------
# Trace I/O
# ---------------------------------------------------------------------------

def load_trace(path) -> PowerTrace:
    """Read a CSV trace with a "t_seconds,power_watts" header."""
    samples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["t_seconds", "power_watts"]:
            raise ProfilerError('trace file must start with "t_seconds,power_watts"')
        for row in reader:
            if not row:
                continue
            samples.append((float(row[0]), float(row[1])))
    return PowerTrace(samples=tuple(samples), source=SOURCE_FILE)


def save_trace(path, trace: PowerTrace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "power_watts"])
        for t, p in trace.samples:
            writer.writerow([f"{t:.9g}", f"{p:.9g}"])


def read_sensor_watts(path: str = SENSOR_PATH) -> float | None:
    """Instantaneous draw from the platform sensor, or None if absent."""
    try:
        with open(path) as fh:
            microwatts = float(fh.read().strip())
    except (OSError, ValueError):
        return None
    return microwatts / 1e6


# ---------------------------------------------------------------------------
# Synthetic compute model
# ---------------------------------------------------------------------------

def generator_macs(dims: tuple[int, int], channels: int) -> int:
    """Multiply-accumulates of one generator pass at the given dims.

    Five 3x3 same-padded convolutions: 3->c, three c->c, c->3.
    """
    h, w = dims
    per_pixel = 9 * (3 * channels + 3 * channels * channels + channels * 3)
    return h * w * per_pixel


def scale_macs(bundle: TrainedBundle, up_to_scale: int) -> list[int]:
    """Per-scale generator work for a default-dims run up to each scale."""
    schedule = bundle.manifest.schedule
    dims = chain_dims(schedule.dims[0], schedule.factor, up_to_scale + 1)
    return [generator_macs(dims[i], channels_for_scale(i)) for i in range(up_to_scale + 1)]


def synthetic_trace(macs: list[int]) -> tuple[PowerTrace, float]:
    """Piecewise-constant trace for one run: a segment per scale.

    Returns the trace and its total model-time duration.
    """
    samples = []
    t = 0.0
    for m in macs:
        samples.append((t, IDLE_WATTS + WATTS_PER_GMAC * (m / 1e9)))
        t += m / MACS_PER_SECOND
    return PowerTrace(samples=tuple(samples), source=SOURCE_SYNTHETIC), t


# ---------------------------------------------------------------------------
# Profiling runs
# ---------------------------------------------------------------------------

def profile_generation(
    bundle: TrainedBundle,
    request: GenerationRequest,
    trace_source: str = SOURCE_SYNTHETIC,
) -> EnergyReport:
    """Run generation at every prefix depth and report per-scale EDP.

    trace_source is "synthetic_model", "platform_sensor", or a path to a
    CSV trace file. The sensor falls back to the synthetic model with a
    warning when the platform exposes none. Synthetic EDP uses the model
    time base; measured wall time is reported alongside.
    """
    if request.inject is not None:
        raise ProfilerError("profiling covers plain generation requests only")
    source = trace_source
    sensor_watts = None
    if trace_source == SOURCE_SENSOR:
        sensor_watts = read_sensor_watts()
        if sensor_watts is None:
            warnings.warn(
                "platform power sensor unavailable; falling back to the synthetic model",
                RuntimeWarning,
            )
            source = SOURCE_SYNTHETIC

    file_trace = None
    if source not in (SOURCE_SYNTHETIC, SOURCE_SENSOR):
        file_trace = load_trace(source)
        source = SOURCE_FILE

    entries = []
    for k in range(request.up_to_scale + 1):
        sub = GenerationRequest(
            up_to_scale=k, target_dims=request.target_dims, seed=request.seed
        )
        started = time.perf_counter()
        generate(bundle, sub)
        wall = time.perf_counter() - started

        if source == SOURCE_SYNTHETIC:
            trace, duration = synthetic_trace(scale_macs(bundle, k))
        elif source == SOURCE_SENSOR:
            trace = PowerTrace(samples=((0.0, sensor_watts),), source=SOURCE_SENSOR)
            duration = wall
        else:
            trace = file_trace
            duration = wall
        entries.append(
            ScaleEnergy(
                up_to_scale=k,
                wall_time=wall,
                model_time=duration,
                avg_power=average_power(trace, duration),
                edp=edp(trace, duration),
            )
        )
    normalized = normalize_edp([e.edp for e in entries])
    return EnergyReport(entries=tuple(entries), normalized_edp=normalized, source=source)


def report_to_dict(report: EnergyReport) -> dict:
    return {
        "source": report.source,
        "entries": [
            {
                "up_to_scale": e.up_to_scale,
                "wall_time": e.wall_time,
                "model_time": e.model_time,
                "avg_power": e.avg_power,
                "edp": e.edp,
            }
            for e in report.entries
        ],
        "normalized_edp": list(report.normalized_edp),
    }


def report_json(report: EnergyReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True)


def report_table(report: EnergyReport) -> str:
    """Plot-ready fixed-width table of the per-scale energy figures."""
    lines = ["scale  wall_s     model_s    avg_w      edp        edp_norm"]
    for e, n in zip(report.entries, report.normalized_edp):
        lines.append(
            f"{e.up_to_scale:<6d} {e.wall_time:<10.4f} {e.model_time:<10.4f} "
            f"{e.avg_power:<10.4f} {e.edp:<10.4f} {n:.6f}"
        )
    return "\n".join(lines)
