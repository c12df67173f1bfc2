import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_boxes(rng, n, size=100.0, min_wh=1.0, max_wh=40.0):
    """``(n, 4)`` random boxes inside a ``size`` square frame."""
    wh = rng.uniform(min_wh, max_wh, size=(n, 2))
    xy = rng.uniform(0.0, size - max_wh, size=(n, 2))
    return np.hstack([xy, wh])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
