"""Command-line entry points.

Subcommands: train, serve, fetch, generate, edit, profile, bench.
Option precedence, lowest to highest: built-in defaults, command-line
flags, then the --config file. Failures print one machine-parsable JSON
line on stderr and exit nonzero (2 usage, 3 training, 4 protocol, 5 I/O).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import editor_apps, profiler
from .bundle_protocol import client as client_mod
from .bundle_protocol import format as format_mod
from .gan_models import ModelError, channels_for_scale, param_count
from .inference import GenerationRequest, RequestError, ScaleUnavailable, generate
from .pyramid import PyramidError, compute_scale_schedule, load_image, save_image
from .trainer import (
    DELIVERY_MODES,
    MODE_PARALLEL_ONESHOT,
    TrainConfig,
    TrainingDiverged,
    TrainingJobFailed,
    train_all_parallel,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRAINING = 3
EXIT_PROTOCOL = 4
EXIT_IO = 5

ENV_SERVER = "SETGAN_SERVER"
ENV_TOKEN = "SETGAN_TOKEN"

# flag name -> TrainConfig field
_CONFIG_FLAGS = {
    "iterations": "iterations_per_scale",
    "g_steps": "g_steps",
    "d_steps": "d_steps",
    "lr": "learning_rate",
    "lr_decay_factor": "lr_decay_factor",
    "lr_decay_after": "lr_decay_after",
    "beta1": "adam_beta1",
    "beta2": "adam_beta2",
    "alpha_rec": "alpha_rec",
    "gp_weight": "gp_weight",
    "threshold": "ssim_threshold",
    "workers": "worker_count",
    "seed": "seed",
    "max_dim": "max_dim",
    "min_dim": "min_dim",
    "r_target": "r_target",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training configuration")
    group.add_argument("--iterations", type=int, default=None)
    group.add_argument("--g-steps", type=int, default=None)
    group.add_argument("--d-steps", type=int, default=None)
    group.add_argument("--lr", type=float, default=None)
    group.add_argument("--lr-decay-factor", type=float, default=None)
    group.add_argument("--lr-decay-after", type=int, default=None)
    group.add_argument("--beta1", type=float, default=None)
    group.add_argument("--beta2", type=float, default=None)
    group.add_argument("--alpha-rec", type=float, default=None)
    group.add_argument("--gp-weight", type=float, default=None)
    group.add_argument("--threshold", type=float, default=None)
    group.add_argument("--workers", type=int, default=None)
    group.add_argument("--seed", type=int, default=None)
    group.add_argument("--max-dim", type=int, default=None)
    group.add_argument("--min-dim", type=int, default=None)
    group.add_argument("--r-target", type=float, default=None)
    group.add_argument("--config", default=None, help="JSON file of config fields; overrides flags")


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    """defaults < flags < config file."""
    fields = {}
    for flag, field in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            fields[field] = value
    if getattr(args, "config", None):
        with open(args.config) as fh:
            file_fields = json.load(fh)
        known = {f.name for f in dataclasses.fields(TrainConfig)}
        unknown = set(file_fields) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        fields.update(file_fields)
    return TrainConfig(**fields)


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def _parse_dims(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ValueError(f"dims must look like 32x48, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="setgan")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a bundle from one image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", default=None, help=f"bundle path (default: image stem + {format_mod.BUNDLE_EXTENSION})")
    p.add_argument("--mode", choices=DELIVERY_MODES, default=MODE_PARALLEL_ONESHOT)
    p.add_argument("--telemetry", default=None, help="write per-iteration records as JSON lines")
    p.add_argument("--compress", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("serve", help="run the training/delivery server")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    p = sub.add_parser("fetch", help="assemble a bundle from a server job")
    p.add_argument("--server", default=os.environ.get(ENV_SERVER, "http://127.0.0.1:8000"))
    p.add_argument("--job", required=True)
    p.add_argument("--token", default=os.environ.get(ENV_TOKEN))
    p.add_argument("--out", required=True)
    p.add_argument("--compress", action="store_true")

    p = sub.add_parser("generate", help="sample an image from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, default=None, help="finest scale to use (default: best)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coarse-dims", default=None, help="coarsest noise dims, HxW")

    p = sub.add_parser("edit", help="run an image-manipulation application")
    p.add_argument("--bundle", required=True)
    p.add_argument(
        "--kind",
        required=True,
        choices=["super_resolution", "paint2image", "harmonization", "editing"],
    )
    p.add_argument("--image", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--at-scale", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sr-factor", type=float, default=None)
    p.add_argument("--sr-passes", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("profile", help="per-scale energy-delay report for a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--power", default="synthetic", help="synthetic, sensor, or a CSV trace path")
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the full report as JSON")

    p = sub.add_parser("bench", help="print the desk-scale geometry/memory/energy tables")
    p.add_argument("--out", default=None, help="write the tables as JSON")

    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    config = config_from_args(args)
    image = load_image(args.image)
    sink = None
    telemetry_file = None
    if args.telemetry:
        telemetry_file = open(args.telemetry, "w")

        def sink(record):
            telemetry_file.write(json.dumps(record, sort_keys=True) + "\n")

    try:
        result = train_all_parallel(image, config, mode=args.mode, telemetry_sink=sink)
    finally:
        if telemetry_file is not None:
            telemetry_file.close()
    out = args.out
    if out is None:
        stem, _ = os.path.splitext(args.image)
        out = stem + format_mod.BUNDLE_EXTENSION
    format_mod.write_bundle_file(out, result.bundle, compressed=args.compress)
    print(
        json.dumps(
            {
                "bundle": out,
                "job_id": result.bundle.manifest.job_id,
                "best_scale": result.best_scale,
                "scale_count": result.bundle.manifest.schedule.scale_count,
                "per_scale_ssim": result.per_scale_ssim,
                "per_scale_wall_time": result.per_scale_wall_time,
            }
        )
    )
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .bundle_protocol.server import create_app

    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)
    return EXIT_OK


def _cmd_fetch(args) -> int:
    if not args.token:
        raise ValueError(f"no token: pass --token or set {ENV_TOKEN}")
    with client_mod.BundleClient(base_url=args.server, token=args.token) as cli:
        assembled = cli.assemble(args.job)
    format_mod.write_bundle_file(args.out, assembled.bundle, compressed=args.compress)
    print(
        json.dumps(
            {
                "bundle": args.out,
                "scales": assembled.bundle.scale_count_available,
                "refreshable": assembled.refreshable,
            }
        )
    )
    return EXIT_OK


def _cmd_generate(args) -> int:
    bundle = format_mod.read_bundle_file(args.bundle)
    available = bundle.scale_count_available
    scale = args.scale
    if scale is None:
        best = bundle.manifest.best_scale
        scale = min(best, available - 1) if best is not None else available - 1
    dims = _parse_dims(args.coarse_dims) if args.coarse_dims else None
    image = generate(
        bundle, GenerationRequest(up_to_scale=scale, target_dims=dims, seed=args.seed)
    )
    save_image(args.out, image)
    print(json.dumps({"out": args.out, "dims": list(image.shape[:2]), "scale": scale}))
    return EXIT_OK


def _cmd_edit(args) -> int:
    bundle = format_mod.read_bundle_file(args.bundle)
    image = load_image(args.image)
    if args.kind == "super_resolution":
        if args.sr_factor is None:
            factor = bundle.manifest.schedule.factor ** args.sr_passes
        else:
            factor = args.sr_factor
        result = editor_apps.super_resolution(bundle, image, factor, args.sr_passes, args.seed)
    elif args.kind == "paint2image":
        at_scale = 1 if args.at_scale is None else args.at_scale
        result = editor_apps.paint2image(bundle, image, at_scale, args.seed)
    else:
        if not args.mask:
            raise ValueError(f"{args.kind} requires --mask")
        mask = editor_apps.load_mask(args.mask)
        if args.kind == "harmonization":
            result = editor_apps.harmonize(bundle, image, mask, args.at_scale, args.seed)
        else:
            at_scale = 2 if args.at_scale is None else args.at_scale
            result = editor_apps.edit(bundle, image, mask, at_scale, args.seed)
    save_image(args.out, result)
    print(json.dumps({"out": args.out, "dims": list(result.shape[:2]), "kind": args.kind}))
    return EXIT_OK


def _cmd_profile(args) -> int:
    bundle = format_mod.read_bundle_file(args.bundle)
    scale = args.scale if args.scale is not None else bundle.scale_count_available - 1
    source = {
        "synthetic": profiler.SOURCE_SYNTHETIC,
        "sensor": profiler.SOURCE_SENSOR,
    }.get(args.power, args.power)
    report = profiler.profile_generation(
        bundle, GenerationRequest(up_to_scale=scale, seed=args.seed), trace_source=source
    )
    print(profiler.report_table(report))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(profiler.report_json(report))
    return EXIT_OK


def _cmd_bench(args) -> int:
    tables: dict = {}

    schedule = compute_scale_schedule((256, 256), max_dim=256, min_dim=25, r_target=4.0 / 3.0)
    tables["schedule"] = {
        "scale_count": schedule.scale_count,
        "factor": schedule.factor,
        "dims": [list(d) for d in schedule.dims],
    }
    print(f"scale schedule: {schedule.scale_count} scales, r={schedule.factor:.5f}")
    for i, d in enumerate(schedule.dims):
        print(f"  scale {i}: {d[0]}x{d[1]}  ({channels_for_scale(i)} channels)")

    counts = [param_count(i) for i in range(schedule.scale_count)]
    tables["param_counts"] = counts
    tables["blob_bytes"] = [4 * c for c in counts]
    print("parameters per scale (generator + discriminator):")
    for i, c in enumerate(counts):
        print(f"  scale {i}: {c} params, blob {4 * c} bytes")

    macs = [
        profiler.generator_macs(schedule.dims[i], channels_for_scale(i))
        for i in range(schedule.scale_count)
    ]
    edps = []
    for k in range(schedule.scale_count):
        trace, duration = profiler.synthetic_trace(macs[: k + 1])
        edps.append(profiler.edp(trace, duration))
    normalized = profiler.normalize_edp(edps)
    tables["normalized_edp"] = list(normalized)
    print("normalized EDP by finest scale used (synthetic power model):")
    for i, value in enumerate(normalized):
        print(f"  scale {i}: {value:.6f}")

    if args.out:
        with open(args.out, "w") as fh:
            json.dump(tables, fh, indent=2, sort_keys=True)
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "serve": _cmd_serve,
    "fetch": _cmd_fetch,
    "generate": _cmd_generate,
    "edit": _cmd_edit,
    "profile": _cmd_profile,
    "bench": _cmd_bench,
}


def _fail(code: int, error: str, message: str) -> int:
    print(json.dumps({"error": error, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except TrainingDiverged as exc:
        return _fail(EXIT_TRAINING, "training_diverged", str(exc))
    except TrainingJobFailed as exc:
        return _fail(EXIT_TRAINING, "training_failed", str(exc))
    except (format_mod.BundleError, client_mod.ProtocolError, ScaleUnavailable) as exc:
        return _fail(EXIT_PROTOCOL, getattr(exc, "code", "protocol_error"), str(exc))
    except (PyramidError, RequestError, editor_apps.EditError, ModelError, ValueError) as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
