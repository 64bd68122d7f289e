import numpy as np
import pytest

from lossmix import kernels
from lossmix.signal import DataConfig

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def impl(request):
    return kernels.get_impl(request.param)


@pytest.fixture
def small_data_config():
    return DataConfig(n_pairs=12, n_test=4, duration=0.25, seed=7)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(label, ok, detail=""):
        ACCEPTANCE_RESULTS.append((label, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {label} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
