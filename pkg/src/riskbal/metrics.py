"""Discrimination and calibration metrics for right-censored data."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import cox


class UndefinedMetricError(ValueError):
    pass


def _arrays(risks, times, events):
    r = np.asarray(risks, dtype=float)
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=bool)
    if not (r.shape == t.shape == e.shape) or r.ndim != 1:
        raise ValueError("risks, times and events must be 1-D and of equal length")
    return r, t, e


def kaplan_meier(times, events):
    """Kaplan-Meier estimate at the distinct observed times.

    Returns ``(t, S, at_risk, n_events)``; ``S[i]`` is the survival just after
    ``t[i]``.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(events, dtype=bool)
    uniq, inv = np.unique(t, return_inverse=True)
    d = np.bincount(inv, weights=e, minlength=len(uniq))
    n_at = np.bincount(inv, minlength=len(uniq))
    at_risk = n_at[::-1].cumsum()[::-1]
    surv = np.cumprod(1.0 - d / at_risk)
    return uniq, surv, at_risk, d


def step_left(t_grid, values, at, initial: float = 1.0):
    """Left limit f(at-) of a right-continuous step function."""
    idx = np.searchsorted(t_grid, at, side="left")
    return np.concatenate([[initial], values])[idx]


def step_right(t_grid, values, at, initial: float = 1.0):
    idx = np.searchsorted(t_grid, at, side="right")
    return np.concatenate([[initial], values])[idx]


def concordance_counts(risks, times, events) -> tuple[int, int, int]:
    """(concordant, tied-risk, comparable) counts for Harrell's C.

    A pair (i, j) is comparable when i is an event and ``t_i < t_j``. Counting
    sweeps times downward with a Fenwick tree over risk ranks.
    """
    r, t, e = _arrays(risks, times, events)
    n = len(r)
    levels, rank = np.unique(r, return_inverse=True)
    m = len(levels)
    tree = [0] * (m + 1)

    def add(k):
        k += 1
        while k <= m:
            tree[k] += 1
            k += k & -k

    def prefix(k):  # number inserted with rank < k
        s = 0
        while k > 0:
            s += tree[k]
            k -= k & -k
        return s

    order = np.argsort(-t, kind="stable")
    ts, es, rk = t[order].tolist(), e[order].tolist(), rank[order].tolist()
    conc = ties = comp = 0
    inserted = 0
    i = 0
    while i < n:
        j = i
        while j < n and ts[j] == ts[i]:
            j += 1
        for k in range(i, j):
            if es[k]:
                below = prefix(rk[k])
                upto = prefix(rk[k] + 1)
                conc += below
                ties += upto - below
                comp += inserted
        for k in range(i, j):
            add(rk[k])
        inserted += j - i
        i = j
    return conc, ties, comp


def harrells_c(risks, times, events) -> float:
    """Fraction of comparable pairs ordered correctly; higher risk should die first."""
    conc, ties, comp = concordance_counts(risks, times, events)
    if comp == 0:
        raise UndefinedMetricError("no comparable pairs")
    return (2 * conc + ties) / (2 * comp)


def censoring_survival(times, events):
    """Kaplan-Meier estimate of the censoring distribution G."""
    return kaplan_meier(times, ~np.asarray(events, dtype=bool))


def auc_at(risks, times, events, horizon: float = 60.0) -> float:
    """Cumulative/dynamic AUC at ``horizon`` with IPCW weights.

    Cases died by ``horizon`` and are weighted by 1 / G(T_i-); controls are
    still at risk after ``horizon`` and share the weight 1 / G(horizon), which
    cancels.
    """
    r, t, e = _arrays(risks, times, events)
    case = e & (t <= horizon)
    ctrl = t > horizon
    if not case.any() or not ctrl.any():
        raise UndefinedMetricError("time-dependent AUC needs at least one case and one control")
    gt, gs, _, _ = censoring_survival(t, e)
    g = step_left(gt, gs, t[case])
    if np.any(g <= 0):
        raise UndefinedMetricError("censoring survival reached zero before a case time")
    w = 1.0 / g
    rc = np.sort(r[ctrl])
    below = np.searchsorted(rc, r[case], side="left")
    upto = np.searchsorted(rc, r[case], side="right")
    score = below + 0.5 * (upto - below)
    return float(np.sum(w * score) / (np.sum(w) * len(rc)))


def rcs_basis(x, knots) -> np.ndarray:
    """Restricted (natural) cubic spline basis: linear term plus len(knots)-2 cubic terms."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(knots, dtype=float)
    cols = [x]
    if len(k) >= 3:
        kl, kp = k[-1], k[-2]
        norm = (kl - k[0]) ** 2

        def cube(z):
            return np.clip(z, 0, None) ** 3

        for kj in k[:-2]:
            term = (cube(x - kj) - cube(x - kp) * (kl - kj) / (kl - kp)
                    + cube(x - kl) * (kp - kj) / (kl - kp))
            cols.append(term / norm)
    return np.column_stack(cols)


def _cox_on_matrix(Z, times, events, config=None):
    from .cohort import Cohort, CovariateSchema

    schema = CovariateSchema.from_pairs((f"s{i}", "numeric") for i in range(Z.shape[1]))
    n = len(times)
    cohort = Cohort(schema, [str(i) for i in range(n)], Z, times, events, ["alone"] * n)
    return cox.fit(cohort, config)


def ici_at(risks, times, events, horizon: float = 60.0) -> float:
    """Integrated calibration index at ``horizon``.

    Observed risk is smoothed by a Cox model of the outcome on a restricted
    cubic spline of cloglog(predicted risk), knots at the minimum, quartiles
    and maximum; ICI is the mean absolute gap between predicted and smoothed
    risk.
    """
    r, t, e = _arrays(risks, times, events)
    if len(r) < 50:
        raise UndefinedMetricError("ICI needs at least 50 patients")
    if not e.any():
        raise UndefinedMetricError("ICI needs at least one event")
    x = np.log(-np.log1p(-np.clip(r, 1e-8, 1 - 1e-8)))
    knots = np.unique(np.quantile(x, [0.0, 0.25, 0.5, 0.75, 1.0]))
    if len(knots) < 2:
        warnings.warn("all predictions equal; using intercept-only recalibration", stacklevel=2)
        km_t, km_s, _, _ = kaplan_meier(t, e)
        observed = np.full(len(r), 1.0 - step_right(km_t, km_s, horizon))
        return float(np.mean(np.abs(r - observed)))
    Z = rcs_basis(x, knots)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cal = _cox_on_matrix(Z, t, e)
    observed = cal.predict_risk(Z, horizon)
    return float(np.mean(np.abs(r - observed)))


@dataclass(frozen=True)
class MetricReport:
    harrells_c: float
    auc: float | None
    ici: float | None
    n: int
    n_events: int
    c_ci: tuple[float, float] | None = None
    auc_ci: tuple[float, float] | None = None
    horizon: float = 60.0

    def as_dict(self) -> dict:
        return {"harrells_c": self.harrells_c, "c_ci": self.c_ci, "auc": self.auc,
                "auc_ci": self.auc_ci, "ici": self.ici, "n": self.n, "n_events": self.n_events,
                "horizon": self.horizon}


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def evaluate(risks, times, events, horizon: float = 60.0, *, ci_replicates: int = 0,
             seed: int = 0, metrics=("c", "auc", "ici")) -> MetricReport:
    """All metrics for fixed predictions, with optional percentile CIs.

    CIs resample patients with the predictions held fixed (no refitting).
    """
    r, t, e = _arrays(risks, times, events)
    c = harrells_c(r, t, e)
    auc = _maybe(auc_at, r, t, e, horizon) if "auc" in metrics else None
    ici = _maybe(ici_at, r, t, e, horizon) if "ici" in metrics else None
    c_ci = auc_ci = None
    if ci_replicates:
        rng = np.random.default_rng(seed)
        cs, aucs = [], []
        for _ in range(ci_replicates):
            idx = rng.integers(0, len(r), len(r))
            v = _maybe(harrells_c, r[idx], t[idx], e[idx])
            if v is not None:
                cs.append(v)
            if auc is not None:
                v = _maybe(auc_at, r[idx], t[idx], e[idx], horizon)
                if v is not None:
                    aucs.append(v)
        c_ci = _percentile_ci(cs)
        auc_ci = _percentile_ci(aucs) if aucs else None
    return MetricReport(c, auc, ici, len(r), int(e.sum()), c_ci, auc_ci, horizon)


def _percentile_ci(values, level: float = 0.95) -> tuple[float, float] | None:
    if not values:
        return None
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)
