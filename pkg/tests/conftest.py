import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covmc.data import Covariates, MaskedMatrix, ModelState

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_instance(seed, n=30, m=25, d=3, r=2, pi=0.6, noise=0.5):
    """Small masked instance with an intercept column; every column keeps >= d+1 observations."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, d - 1))])
    beta = rng.standard_normal((m, d))
    L = rng.standard_normal((n, r))
    F = rng.standard_normal((m, r))
    Y = X @ beta.T + L @ F.T + noise * rng.standard_normal((n, m))
    mask = rng.random((n, m)) < pi
    mask[: d + 1 + r, :] = True
    mask[:, : r + 1] = True
    return MaskedMatrix(Y, mask.astype(np.int8)), Covariates(X), ModelState(beta, L, F)


@pytest.fixture
def instance():
    return random_instance(0)


# PASS/FAIL lines from the acceptance suite, repeated at the end of the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
