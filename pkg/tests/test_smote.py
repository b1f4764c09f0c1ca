import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riskbal.cohort import BINARY, NUMERIC
from riskbal.matching import Standardization
from riskbal.smote import SmoteConfig, is_synthetic, smote_balance

from conftest import make_cohort


def event_cohort(rng, n=100, n_events=20, K=3, kinds=None):
    X = rng.standard_normal((n, K))
    if kinds:
        for k, kind in enumerate(kinds):
            if kind == BINARY:
                X[:, k] = rng.random(n) < 0.4
    e = np.zeros(n, dtype=bool)
    e[rng.choice(n, n_events, replace=False)] = True
    return make_cohort(X, rng.exponential(30, n) + 0.1, e, kinds=kinds)


def run(c, **kw):
    return smote_balance(c, SmoteConfig(**kw), Standardization.fit(c.X))


def find_parents(x, t, Xm, tm, tol=1e-9):
    """All minority pairs (i, j, u) whose segment passes through (x, t)."""
    hits = []
    for i in range(len(Xm)):
        for j in range(len(Xm)):
            if i == j:
                continue
            d = Xm[j] - Xm[i]
            k = np.argmax(np.abs(d))
            if abs(d[k]) < tol:
                continue
            u = (x[k] - Xm[i, k]) / d[k]
            if -tol <= u <= 1 + tol and np.allclose(Xm[i] + u * d, x, atol=tol):
                if abs(tm[i] + u * (tm[j] - tm[i]) - t) < 1e-7:
                    hits.append((i, j, u))
    return hits


def test_balanced_input_is_returned_unchanged(rng):
    c = event_cohort(rng, n=40, n_events=20)
    assert run(c) is c


def test_identical_parents_give_identical_record():
    X = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0], [6.0, 6.0], [7.0, 7.0]])
    c = make_cohort(X, [4.0, 4.0, 9.0, 9.0, 9.0], [1, 1, 0, 0, 0])
    out = run(c, k_neighbors=1)
    syn = is_synthetic(out)
    assert syn.sum() == 1
    np.testing.assert_array_equal(out.X[syn][0], [1.0, 2.0])
    assert out.time[syn][0] == 4.0 and out.event[syn][0]


def test_full_sized_example(rng):
    c = event_cohort(rng)
    out = run(c, seed=3)
    syn = is_synthetic(out)
    assert syn.sum() == 60 and out.event[syn].all()
    assert out.n_events == (~out.event).sum() == 80
    m = c.event
    Xm, tm = c.X[m], c.time[m]
    Z = Standardization.fit(c.X).transform(Xm)
    d = np.linalg.norm(Z[:, None] - Z[None], axis=2)
    np.fill_diagonal(d, np.inf)
    for x, t in zip(out.X[syn], out.time[syn]):
        hits = find_parents(x, t, Xm, tm)
        assert hits
        i, j, _ = hits[0]
        assert min(tm[i], tm[j]) - 1e-9 <= t <= max(tm[i], tm[j]) + 1e-9
        # the segment runs from a record to one of its 5 nearest minority records
        assert any(np.sum(d[i] < d[i, j]) < 5 for i, j, _ in hits)


def test_censored_minority(rng):
    c = event_cohort(rng, n=50, n_events=40)
    out = run(c)
    syn = is_synthetic(out)
    assert syn.sum() == 30 and not out.event[syn].any()


def test_target_ratio(rng):
    c = event_cohort(rng)
    out = run(c, target_ratio=0.5)
    assert is_synthetic(out).sum() == 20


def test_binary_columns_rounded_within_parents(rng):
    kinds = [NUMERIC, BINARY, NUMERIC, BINARY]
    c = event_cohort(rng, K=4, kinds=kinds)
    out = run(c, seed=1)
    syn = out.X[is_synthetic(out)]
    assert set(np.unique(syn[:, [1, 3]])) <= {0.0, 1.0}
    Xm, tm = c.X[c.event], c.time[c.event]
    num = [0, 2]
    t_syn = out.time[is_synthetic(out)]
    for x, t in zip(syn, t_syn):
        hits = [h for h in find_parents(x[num], t, Xm[:, num], tm)
                if all(x[b] in (Xm[h[0], b], Xm[h[1], b]) for b in (1, 3))]
        assert hits


def test_originals_pass_through(rng):
    c = event_cohort(rng)
    out = run(c)
    keep = ~is_synthetic(out)
    np.testing.assert_array_equal(out.X[keep], c.X)
    np.testing.assert_array_equal(out.time[keep], c.time)
    assert out.ids[keep].tolist() == c.ids.tolist()


def test_minority_too_small(rng):
    c = event_cohort(rng, n=30, n_events=4)
    with pytest.raises(ValueError, match="4 records"):
        run(c, k_neighbors=5)


def test_config_validation():
    with pytest.raises(ValueError):
        SmoteConfig(k_neighbors=0)
    with pytest.raises(ValueError):
        SmoteConfig(target_ratio=1.5)


@given(st.integers(0, 2**32 - 1))
def test_seeded_runs_reproducible_and_in_hull(seed):
    rng = np.random.default_rng(seed)
    c = event_cohort(rng, n=60, n_events=15)
    a, b = run(c, seed=seed), run(c, seed=seed)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.time, b.time)
    Xm = c.X[c.event]
    syn = a.X[is_synthetic(a)]
    assert np.all(syn >= Xm.min(axis=0) - 1e-12) and np.all(syn <= Xm.max(axis=0) + 1e-12)
