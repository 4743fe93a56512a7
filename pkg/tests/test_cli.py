"""CLI surface: option precedence, round trips, exit-code contract."""

from __future__ import annotations

import json
import subprocess
import sys
from types import SimpleNamespace

import pytest

import setgan.cli as cli_mod
from setgan.cli import (
    EXIT_IO,
    EXIT_PROTOCOL,
    EXIT_TRAINING,
    EXIT_USAGE,
    build_parser,
    config_from_args,
    main,
)
from setgan.pyramid import save_image
from setgan.trainer import TrainingDiverged
from toys import mini_image


MINI_TRAIN_FLAGS = [
    "--iterations", "2", "--min-dim", "27", "--max-dim", "48",
    "--r-target", str(4.0 / 3.0), "--workers", "1",
    "--threshold", "1.01", "--seed", "3",
]


def run_cli(argv, capsys) -> SimpleNamespace:
    code = main(argv)
    captured = capsys.readouterr()
    return SimpleNamespace(code=code, out=captured.out, err=captured.err)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One CLI-trained bundle shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("cli_train")
    image_path = root / "input.png"
    save_image(image_path, mini_image())
    bundle_path = root / "toy.setgan"
    telemetry_path = root / "telemetry.jsonl"
    code = main(
        ["train", "--image", str(image_path), "--out", str(bundle_path),
         "--mode", "baseline_serial", "--telemetry", str(telemetry_path)]
        + MINI_TRAIN_FLAGS
    )
    assert code == 0
    return SimpleNamespace(
        root=root, image=image_path, bundle=bundle_path, telemetry=telemetry_path
    )


# ---------------------------------------------------------------------------
# Configuration assembly
# ---------------------------------------------------------------------------

def test_config_defaults_then_flags_then_file(tmp_path):
    parser = build_parser()
    base = ["train", "--image", "x.png"]

    args = parser.parse_args(base)
    assert config_from_args(args).iterations_per_scale == 2000

    args = parser.parse_args(base + ["--iterations", "7", "--lr", "0.001"])
    config = config_from_args(args)
    assert config.iterations_per_scale == 7
    assert config.learning_rate == 0.001

    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({"iterations_per_scale": 9}))
    args = parser.parse_args(
        base + ["--iterations", "7", "--lr", "0.001", "--config", str(config_path)]
    )
    config = config_from_args(args)
    assert config.iterations_per_scale == 9  # file wins over the flag
    assert config.learning_rate == 0.001  # untouched fields keep flag values


def test_config_file_rejects_unknown_fields(tmp_path):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({"iterations": 5}))
    parser = build_parser()
    args = parser.parse_args(["train", "--image", "x.png", "--config", str(config_path)])
    with pytest.raises(ValueError, match="unknown config fields"):
        config_from_args(args)


# ---------------------------------------------------------------------------
# train / generate round trip
# ---------------------------------------------------------------------------

def test_train_reports_summary_and_telemetry(trained, capsys):
    # the fixture already ran training; re-check its artifacts
    assert trained.bundle.exists()
    lines = trained.telemetry.read_text().splitlines()
    assert lines
    record = json.loads(lines[0])
    assert {"scale", "iteration", "d_loss", "g_loss", "rec_loss", "lr"} <= set(record)


def test_generate_is_reproducible(trained, capsys, tmp_path):
    out1, out2 = tmp_path / "a.png", tmp_path / "b.png"
    first = run_cli(
        ["generate", "--bundle", str(trained.bundle), "--out", str(out1), "--seed", "4"],
        capsys,
    )
    assert first.code == 0
    summary = json.loads(first.out)
    assert summary["dims"] == [48, 48]
    assert summary["scale"] == 2
    second = run_cli(
        ["generate", "--bundle", str(trained.bundle), "--out", str(out2), "--seed", "4"],
        capsys,
    )
    assert second.code == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_generate_scale_and_dims_flags(trained, capsys, tmp_path):
    out = tmp_path / "c.png"
    coarse = run_cli(
        ["generate", "--bundle", str(trained.bundle), "--out", str(out), "--scale", "1"],
        capsys,
    )
    assert json.loads(coarse.out)["dims"] == [36, 36]
    custom = run_cli(
        ["generate", "--bundle", str(trained.bundle), "--out", str(out),
         "--coarse-dims", "30x40"],
        capsys,
    )
    assert json.loads(custom.out)["dims"] == [53, 71]


def test_train_compress_writes_compressed_container(capsys, tmp_path):
    image_path = tmp_path / "input.png"
    save_image(image_path, mini_image())
    bundle_path = tmp_path / "small.setgan"
    result = run_cli(
        ["train", "--image", str(image_path), "--out", str(bundle_path), "--compress"]
        + MINI_TRAIN_FLAGS,
        capsys,
    )
    assert result.code == 0
    assert bundle_path.read_bytes()[:4] == b"SETZ"
    out = tmp_path / "from_compressed.png"
    assert run_cli(
        ["generate", "--bundle", str(bundle_path), "--out", str(out)], capsys
    ).code == 0


# ---------------------------------------------------------------------------
# edit / profile / bench
# ---------------------------------------------------------------------------

def test_edit_paint_via_cli(trained, capsys, tmp_path):
    clip_path = tmp_path / "clip.png"
    save_image(clip_path, mini_image(seed=2, dims=(24, 24)))
    out = tmp_path / "painted.png"
    result = run_cli(
        ["edit", "--bundle", str(trained.bundle), "--kind", "paint2image",
         "--image", str(clip_path), "--out", str(out)],
        capsys,
    )
    assert result.code == 0
    assert json.loads(result.out)["dims"] == [48, 48]


def test_edit_masked_kinds_require_mask(trained, capsys, tmp_path):
    result = run_cli(
        ["edit", "--bundle", str(trained.bundle), "--kind", "harmonization",
         "--image", str(trained.image), "--out", str(tmp_path / "x.png")],
        capsys,
    )
    assert result.code == EXIT_USAGE
    assert "requires --mask" in json.loads(result.err)["message"]


def test_profile_prints_table_and_writes_json(trained, capsys, tmp_path):
    report_path = tmp_path / "report.json"
    result = run_cli(
        ["profile", "--bundle", str(trained.bundle), "--out", str(report_path)],
        capsys,
    )
    assert result.code == 0
    assert result.out.splitlines()[0].startswith("scale  wall_s")
    report = json.loads(report_path.read_text())
    assert report["normalized_edp"][-1] == 1.0
    assert len(report["entries"]) == 3


def test_profile_accepts_trace_file(trained, capsys, tmp_path):
    trace_path = tmp_path / "trace.csv"
    trace_path.write_text("t_seconds,power_watts\n0,2.0\n")
    result = run_cli(
        ["profile", "--bundle", str(trained.bundle), "--power", str(trace_path)],
        capsys,
    )
    assert result.code == 0
    for line in result.out.splitlines()[1:]:
        assert line.split()[3] == "2.0000"


def test_bench_tables(capsys, tmp_path):
    out = tmp_path / "bench.json"
    result = run_cli(["bench", "--out", str(out)], capsys)
    assert result.code == 0
    assert "scale schedule: 9 scales" in result.out
    tables = json.loads(out.read_text())
    assert tables["schedule"]["dims"][0] == [25, 25]
    assert tables["schedule"]["dims"][-1] == [256, 256]
    assert len(tables["param_counts"]) == 9
    assert tables["normalized_edp"][-1] == 1.0


# ---------------------------------------------------------------------------
# Exit-code contract: one JSON diagnostic line on stderr
# ---------------------------------------------------------------------------

def test_usage_errors_exit_2(trained, capsys, tmp_path):
    result = run_cli(
        ["generate", "--bundle", str(trained.bundle), "--out", str(tmp_path / "x.png"),
         "--coarse-dims", "bogus"],
        capsys,
    )
    assert result.code == EXIT_USAGE
    diagnostic = json.loads(result.err)
    assert diagnostic["error"] == "usage"
    assert "32x48" in diagnostic["message"]


def test_training_failure_exits_3(capsys, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise TrainingDiverged(0, 17, "d_loss is nan")

    monkeypatch.setattr(cli_mod, "train_all_parallel", explode)
    image_path = tmp_path / "input.png"
    save_image(image_path, mini_image())
    result = run_cli(
        ["train", "--image", str(image_path), "--out", str(tmp_path / "x.setgan")]
        + MINI_TRAIN_FLAGS,
        capsys,
    )
    assert result.code == EXIT_TRAINING
    assert json.loads(result.err)["error"] == "training_diverged"


def test_protocol_failure_exits_4(capsys):
    # nothing listens on the discard port, so the connection is refused
    result = run_cli(
        ["fetch", "--server", "http://127.0.0.1:9", "--job", "abc",
         "--token", "t", "--out", "x.setgan"],
        capsys,
    )
    assert result.code == EXIT_PROTOCOL
    assert "transport failure" in json.loads(result.err)["message"]


def test_missing_bundle_exits_5(capsys, tmp_path):
    result = run_cli(
        ["generate", "--bundle", str(tmp_path / "missing.setgan"),
         "--out", str(tmp_path / "x.png")],
        capsys,
    )
    assert result.code == EXIT_IO
    assert json.loads(result.err)["error"] == "io"


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "setgan.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    for command in ("train", "serve", "fetch", "generate", "edit", "profile", "bench"):
        assert command in proc.stdout
