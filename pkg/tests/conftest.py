import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskbal.cohort import ALONE, CHEMO, NUMERIC, Cohort, CovariateSchema

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_cohort(X, time, event, arm=None, names=None, kinds=None, ids=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, K = X.shape
    names = names or [f"x{k}" for k in range(K)]
    kinds = kinds or [NUMERIC] * K
    schema = CovariateSchema.from_pairs(zip(names, kinds))
    arm = [ALONE] * n if arm is None else arm
    ids = ids or [f"p{i}" for i in range(n)]
    return Cohort(schema, ids, X, time, event, arm)


def two_arm_cohort(rng, n_alone=150, n_chemo=250, K=3, beta=None):
    """Exponential survival with a linear log hazard and light censoring."""
    n = n_alone + n_chemo
    X = rng.standard_normal((n, K))
    beta = np.full(K, 0.5) if beta is None else np.asarray(beta)
    t = rng.exponential(20 * np.exp(-X @ beta))
    c = rng.exponential(80, n)
    arm = [ALONE] * n_alone + [CHEMO] * n_chemo
    return make_cohort(X, np.minimum(t, c) + 1e-9, t <= c, arm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -----------------------------------------------------

ACCEPTANCE_CRITERIA = range(1, 9)
_acceptance: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """``report(criterion, ok, detail)`` records one pass/fail line, then asserts."""

    def report(criterion: int, ok: bool, detail: str) -> None:
        line = f"acceptance {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance[criterion] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for k in ACCEPTANCE_CRITERIA:
        terminalreporter.write_line(_acceptance.get(k, f"acceptance {k}: not run"))
