"""SMOTE-style oversampling of the minority event status within one arm.

Synthetic records interpolate covariates *and* follow-up time between a
minority record and one of its k nearest minority neighbours, using the same
interpolation weight for both. Prognostic strata are ignored on purpose: this
is the global comparison baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .cohort import NUMERIC, Cohort, concat

SYNTHETIC_PREFIX = "smote:"


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0 < self.target_ratio <= 1:
            raise ValueError("target_ratio must lie in (0, 1]")


def is_synthetic(cohort: Cohort) -> np.ndarray:
    return np.array([str(i).startswith(SYNTHETIC_PREFIX) for i in cohort.ids], dtype=bool)


def _round_to_levels(values, first_parent, levels):
    """Nearest level; exact ties go to the level nearer the first parent."""
    gap = np.abs(values[:, None] - levels[None, :])
    best = gap.min(axis=1, keepdims=True)
    tied = np.isclose(gap, best, rtol=0, atol=1e-12)
    pref = np.where(tied, np.abs(first_parent[:, None] - levels[None, :]), np.inf)
    return levels[np.argmin(pref, axis=1)]


def smote_balance(arm_cohort: Cohort, config: SmoteConfig, standardization) -> Cohort:
    """Oversample events or censored records until minority/majority = target_ratio."""
    if arm_cohort.has_missing:
        raise ValueError("impute before oversampling")
    ev = arm_cohort.event
    minority_flag = bool(ev.sum() < (~ev).sum())
    minority = np.flatnonzero(ev == minority_flag)
    n_min, n_maj = len(minority), arm_cohort.n - len(minority)
    n_new = int(round(config.target_ratio * n_maj)) - n_min
    if n_new <= 0:
        return arm_cohort
    k = config.k_neighbors
    if n_min < k + 1:
        raise ValueError(f"minority class ({'events' if minority_flag else 'censored'}) has "
                         f"{n_min} records; SMOTE with k={k} needs at least {k + 1}")
    Xm = arm_cohort.X[minority]
    Z = standardization.transform(Xm)
    d = cdist(Z, Z)
    np.fill_diagonal(d, np.inf)
    knn = np.argsort(d, axis=1, kind="stable")[:, :k]
    rng = np.random.default_rng(config.seed)
    first = rng.integers(0, n_min, n_new)
    second = knn[first, rng.integers(0, k, n_new)]
    u = rng.random(n_new)
    X_new = Xm[first] + u[:, None] * (Xm[second] - Xm[first])
    for c, kind in enumerate(arm_cohort.schema.kinds):
        if kind != NUMERIC:
            levels = np.unique(arm_cohort.X[:, c])
            X_new[:, c] = _round_to_levels(X_new[:, c], Xm[first, c], levels)
    t_min = arm_cohort.time[minority]
    t_new = t_min[first] + u * (t_min[second] - t_min[first])
    ids = [f"{SYNTHETIC_PREFIX}{i:05d}" for i in range(n_new)]
    synthetic = Cohort(arm_cohort.schema, ids, X_new, t_new, np.full(n_new, minority_flag),
                       np.full(n_new, arm_cohort.arm[0], dtype=object))
    return concat([arm_cohort, synthetic], provenance=f"smote[{arm_cohort.provenance}]")
