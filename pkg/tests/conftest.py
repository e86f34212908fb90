import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ehsched.model import Instance

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_instance(rng, N=3, K=6, P=10.0, B_max=20.0, mu=4.0, sd=np.sqrt(2.0)):
    """Point-to-point instance with truncated-Gaussian harvest and Rayleigh gains."""
    harvest = np.abs(rng.normal(mu, sd, (N, K)))
    H = rng.exponential(1.0, (N, K))
    return Instance.point_to_point(H, np.cumsum(harvest, axis=1), np.full(N, P), np.full(N, B_max))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines.values():
            terminalreporter.write_line(line)
