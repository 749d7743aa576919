import numpy as np
import pytest

from colorguide.calibration import CalibrationProfile, estimate_lambda
from colorguide.mixtures import demo_mixture
from colorguide.oracle import exact_denoiser
from colorguide.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule(50, 1e-4)


@pytest.fixture(scope="session")
def demo_model():
    return demo_mixture()


@pytest.fixture(scope="session")
def demo_denoiser(demo_model, schedule):
    return exact_denoiser(demo_model, schedule)


@pytest.fixture(scope="session")
def demo_profile(demo_model, schedule, demo_denoiser):
    lam = estimate_lambda(demo_denoiser, demo_model, schedule, 500, seed=1)
    return CalibrationProfile(lam, sample_count=500, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
