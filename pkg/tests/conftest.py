"""Shared fixtures. The two documented runs execute once per session."""

import time
from dataclasses import dataclass

import pytest

from sawtoothlab.trainer import RunConfig, RunResult, run

# documented acceptance profiles: full-scale and a fast CI-sized variant
REFERENCE = dict(num_functions=10000, dim=10000, problem_seed=13, seed=12, num_epochs=9)
REDUCED = dict(num_functions=2000, dim=2000, problem_seed=5, seed=5, num_epochs=9)


@dataclass
class TimedRun:
    result: RunResult
    seconds: float


def _timed(**kwargs) -> TimedRun:
    start = time.perf_counter()
    result = run(RunConfig(**kwargs))
    return TimedRun(result, time.perf_counter() - start)


@pytest.fixture(scope="session")
def reference_run() -> TimedRun:
    return _timed(**REFERENCE)


@pytest.fixture(scope="session")
def reduced_run() -> TimedRun:
    return _timed(**REDUCED)
