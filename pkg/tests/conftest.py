import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmot.fixtures import gbm_fixture, tiny_sequence

settings.register_profile(
    "repo", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(scope="session")
def small_gbm():
    """N=3 GBM marginals on 60 points."""
    return gbm_fixture(n_steps=3, m=60)


@pytest.fixture(scope="session")
def tiny_instances():
    out = []
    for k in range(6):
        rng = np.random.default_rng(500 + k)
        out.append(tiny_sequence(rng, 1 + k % 2, 4 + k % 3))
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
