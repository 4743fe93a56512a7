"""Session fixtures: the expensive trainings run once and are shared."""

from __future__ import annotations

import time

import pytest

from setgan.trainer import (
    MODE_BASELINE_SERIAL,
    MODE_PARALLEL_ONESHOT,
    train_all_parallel,
)

from toys import convergence_config, mini_config, mini_image, toy_config, toy_texture


@pytest.fixture(scope="session")
def toy_run_single_worker():
    """Toy 5-scale training on one worker; returns (result, wall_seconds)."""
    started = time.perf_counter()
    result = train_all_parallel(toy_texture(), toy_config(1), mode=MODE_PARALLEL_ONESHOT)
    return result, time.perf_counter() - started


@pytest.fixture(scope="session")
def toy_run_four_workers():
    started = time.perf_counter()
    result = train_all_parallel(toy_texture(), toy_config(4), mode=MODE_PARALLEL_ONESHOT)
    return result, time.perf_counter() - started


@pytest.fixture(scope="session")
def toy_bundle(toy_run_single_worker):
    return toy_run_single_worker[0].bundle


@pytest.fixture(scope="session")
def convergence_run():
    """500-iteration texture training; returns (result, telemetry records)."""
    telemetry = []
    result = train_all_parallel(
        toy_texture(),
        convergence_config(),
        mode=MODE_BASELINE_SERIAL,
        telemetry_sink=telemetry.append,
    )
    return result, telemetry


@pytest.fixture(scope="session")
def mini_run():
    """Cheap 3-scale, 2-iteration training used by format/protocol tests."""
    return train_all_parallel(mini_image(), mini_config(), mode=MODE_BASELINE_SERIAL)


@pytest.fixture(scope="session")
def mini_bundle(mini_run):
    return mini_run.bundle
