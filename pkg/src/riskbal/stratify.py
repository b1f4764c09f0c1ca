"""Baseline-risk estimation and prognostic strata."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cox
from .cohort import ALONE, CHEMO, Cohort

PAPER_DEFAULT = "paper-default"
EQUAL_WIDTH = "equal-width"
QUANTILE = "quantile"
POLICIES = (PAPER_DEFAULT, EQUAL_WIDTH, QUANTILE)


class DegenerateBinsError(ValueError):
    pass


@dataclass(frozen=True)
class StratumScheme:
    edges: tuple[float, ...]
    policy: str = PAPER_DEFAULT
    requested_S: int | None = None

    def __post_init__(self):
        e = tuple(float(x) for x in self.edges)
        object.__setattr__(self, "edges", e)
        if len(e) < 2 or e[0] != 0.0 or e[-1] != 1.0:
            raise ValueError(f"edges must run from 0 to 1, got {e}")
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError(f"edges must be strictly increasing, got {e}")

    @property
    def S(self) -> int:
        return len(self.edges) - 1

    def bounds(self, s: int) -> tuple[float, float]:
        return self.edges[s], self.edges[s + 1]

    def label(self, s: int) -> str:
        lo, hi = self.bounds(s)
        return f"{lo:g}-{hi:g}"


def build_scheme(S: int, policy: str = PAPER_DEFAULT, risks=None) -> StratumScheme:
    """Bin edges on [0, 1].

    ``paper-default`` keeps decile edges and merges the lowest ``11 - S``
    deciles into one bin, so S=8 gives {0, .3, .4, ..., .9, 1} and S=10 is
    plain deciles.
    """
    if not 2 <= S <= 20:
        raise ValueError(f"S must be in [2, 20], got {S}")
    if policy == PAPER_DEFAULT:
        if S > 10:
            raise ValueError("paper-default schemes are decile based and need S <= 10")
        edges = [0.0] + [d / 10 for d in range(11 - S, 11)]
    elif policy == EQUAL_WIDTH:
        edges = [i / S for i in range(S + 1)]
    elif policy == QUANTILE:
        if risks is None or len(risks) == 0:
            raise ValueError("quantile policy needs risks")
        r = np.asarray(risks, dtype=float)
        if len(np.unique(r)) < S:
            raise DegenerateBinsError(f"{len(np.unique(r))} distinct risks cannot fill {S} bins")
        inner = np.quantile(r, np.linspace(0, 1, S + 1)[1:-1])
        edges = np.unique(np.concatenate([[0.0], inner[(inner > 0) & (inner < 1)], [1.0]]))
        edges = edges.tolist()
    else:
        raise ValueError(f"unknown binning policy {policy!r}")
    return StratumScheme(tuple(edges), policy, S)


def assign(risks, scheme: StratumScheme) -> np.ndarray:
    """Stratum index per risk: half-open bins [lo, hi), last bin closed at 1."""
    r = np.asarray(risks, dtype=float)
    if np.any((r < 0) | (r > 1)) or np.any(np.isnan(r)):
        raise ValueError("risks must lie in [0, 1]")
    idx = np.searchsorted(np.asarray(scheme.edges), r, side="right") - 1
    return np.minimum(idx, scheme.S - 1)


def counts(strata: np.ndarray, S: int) -> np.ndarray:
    return np.bincount(np.asarray(strata, dtype=int), minlength=S)


def baseline_model(alone_cohort: Cohort, config: cox.FitConfig | None = None) -> cox.CoxModel:
    if alone_cohort.n == 0:
        raise ValueError("baseline model needs surgery-alone patients")
    return cox.fit(alone_cohort, config, arm=ALONE, name="baseline")


def baseline_risks(alone_cohort: Cohort, all_patients: Cohort, horizon: float = 60.0,
                   config: cox.FitConfig | None = None) -> np.ndarray:
    """Untreated risk of death by ``horizon`` for every patient in ``all_patients``.

    The model is fitted on ``alone_cohort`` only and applied to both arms.
    """
    if alone_cohort.schema != all_patients.schema:
        raise ValueError("schemas differ")
    model = baseline_model(alone_cohort, config)
    return model.predict_risk(all_patients.X, horizon)


@dataclass(frozen=True, eq=False)
class StratifiedCohort:
    cohort: Cohort
    risks: np.ndarray
    stratum_index: np.ndarray
    scheme: StratumScheme

    def arm_counts(self) -> dict[str, np.ndarray]:
        return {arm: counts(self.stratum_index[self.cohort.arm == arm], self.scheme.S)
                for arm in (ALONE, CHEMO)}


def stratify(cohort: Cohort, scheme: StratumScheme, horizon: float = 60.0,
             config: cox.FitConfig | None = None) -> StratifiedCohort:
    """Fit the baseline model on the alone arm of ``cohort`` and bin everyone."""
    risks = baseline_risks(cohort.with_arm(ALONE), cohort, horizon, config)
    return StratifiedCohort(cohort, risks, assign(risks, scheme), scheme)


def write_histogram(path: str | Path, scheme: StratumScheme, count_alone, count_chemo) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "lo", "hi", "count_alone", "count_chemo"])
        for s in range(scheme.S):
            lo, hi = scheme.bounds(s)
            w.writerow([s, f"{lo:g}", f"{hi:g}", int(count_alone[s]), int(count_chemo[s])])
