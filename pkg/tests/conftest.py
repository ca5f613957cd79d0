import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dspimage.optics import ComplexField2D, fraunhofer

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

LAMBDA = 794.979e-9
FOCAL = 0.5

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_fourier_field():
    """A random 16x16 Fourier-plane field with 200 um object pitch."""
    r = np.random.default_rng(7)
    u = r.uniform(0.0, 1.0, (16, 16)) * np.exp(1j * r.uniform(0, 2 * np.pi, (16, 16)))
    return fraunhofer(ComplexField2D(u, 200e-6), LAMBDA, FOCAL)
