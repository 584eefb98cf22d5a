import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rcgp.kernels import KernelParams

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(rng, n, d=1, outliers=0):
    """Random regression problem with moderate hyperparameters."""
    X = rng.uniform(-3, 3, size=(n, d))
    kernel = KernelParams(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
    sigma2 = float(rng.uniform(0.05, 0.5))
    y = np.sin(X.sum(axis=1)) + np.sqrt(sigma2) * rng.standard_normal(n)
    if outliers:
        y[rng.choice(n, outliers, replace=False)] += rng.choice([-1, 1], outliers) * rng.uniform(4, 8, outliers)
    return X, y, kernel, sigma2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
