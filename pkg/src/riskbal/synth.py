"""Synthetic two-arm survival cohorts with known five-year risks.

Survival follows a Weibull proportional-hazards model

    H(t | x, arm) = (t / scale) ** shape * exp(eta(x) + treatment_log_hr * [chemo])

where ``eta(x) = x @ beta_true`` optionally plus two kinds of effect
heterogeneity: ``chemo_beta_shift`` (covariate effects that differ in the
chemo arm) and ``tail_beta`` (covariate effects that switch on toward both
ends of the prognostic spectrum). Both default to zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .cohort import ALONE, BINARY, CHEMO, NUMERIC, Cohort, CovariateSchema
from .stratify import PAPER_DEFAULT, assign, build_scheme

NATURAL = "natural"
MID_HEAVY = "mid-heavy"
UNIFORM_TARGET = "uniform-target"
RISK_SHAPES = (NATURAL, MID_HEAVY, UNIFORM_TARGET)

MAX_DRAWS_PER_PATIENT = 10**6
HORIZON = 60.0


class ShapeInfeasibleError(RuntimeError):
    pass


PAPER_LIKE_COVARIATES = (
    ("age", NUMERIC),
    ("log_cea", NUMERIC),
    ("diameter", NUMERIC),
    ("n_mets", NUMERIC),
    ("node_positive", BINARY),
    ("right_sided", BINARY),
    ("extrahepatic", BINARY),
    ("r1_margin", BINARY),
    ("kras", BINARY),
)


@dataclass(frozen=True)
class SynthSpec:
    n_alone: int = 602
    n_chemo: int = 1197
    names: tuple[str, ...] = tuple(n for n, _ in PAPER_LIKE_COVARIATES)
    kinds: tuple[str, ...] = tuple(k for _, k in PAPER_LIKE_COVARIATES)
    binary_p: tuple[float, ...] = (0.6, 0.4, 0.12, 0.15, 0.4)
    beta_true: tuple[float, ...] = (0.25, 0.45, 0.35, 0.35, 0.35, 0.15, 0.6, 0.45, 0.2)
    treatment_log_hr: float = -0.25
    weibull_shape: float = 1.2
    weibull_scale: float = 110.0
    administrative_months: float = 120.0
    dropout_rate: float = 0.004
    risk_shape: str = NATURAL
    seed: int = 0
    chemo_beta_shift: tuple[float, ...] | None = None
    tail_beta: tuple[float, ...] | None = None
    tail_width: float = 1.0
    tail_offset: float = 0.0
    id_prefix: str = ""

    def __post_init__(self):
        K = len(self.names)
        if self.n_alone < 1 or self.n_chemo < 1:
            raise ValueError("arm sizes must be >= 1")
        if self.weibull_shape <= 0 or self.weibull_scale <= 0:
            raise ValueError("Weibull shape and scale must be > 0")
        if len(self.kinds) != K or len(self.beta_true) != K:
            raise ValueError("names, kinds and beta_true must have equal length")
        if sum(k == BINARY for k in self.kinds) != len(self.binary_p):
            raise ValueError("one binary_p entry per binary covariate")
        for v in (self.chemo_beta_shift, self.tail_beta):
            if v is not None and len(v) != K:
                raise ValueError("effect vectors must have one entry per covariate")
        if self.risk_shape not in RISK_SHAPES:
            raise ValueError(f"unknown risk_shape {self.risk_shape!r}")

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def schema(self) -> CovariateSchema:
        return CovariateSchema.from_pairs(zip(self.names, self.kinds))

    @property
    def baseline_risk(self) -> float:
        return float(-np.expm1(-(HORIZON / self.weibull_scale) ** self.weibull_shape))

    def derive(self, **changes) -> "SynthSpec":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    ids: np.ndarray
    true_risk_60: np.ndarray
    true_stratum: np.ndarray


def _lp_centre(spec: SynthSpec) -> float:
    """Linear predictor at which the untreated five-year risk is 1/2."""
    return float(np.log(np.log(2.0)) - spec.weibull_shape * np.log(HORIZON / spec.weibull_scale))


def log_hazard_ratio(spec: SynthSpec, X, chemo=None) -> np.ndarray:
    """eta(x) for each row; ``chemo`` (bool per row) adds the arm-specific terms."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    eta = X @ np.asarray(spec.beta_true)
    if spec.tail_beta is not None:
        lean = np.tanh((eta - _lp_centre(spec)) / spec.tail_width) ** 2 - spec.tail_offset
        eta = eta + lean * (X @ np.asarray(spec.tail_beta))
    if chemo is not None:
        chemo = np.asarray(chemo, dtype=bool)
        extra = spec.treatment_log_hr
        if spec.chemo_beta_shift is not None:
            extra = extra + X @ np.asarray(spec.chemo_beta_shift)
        eta = eta + np.where(chemo, extra, 0.0)
    return eta


def true_risks(spec: SynthSpec, covariates, horizon: float = HORIZON) -> np.ndarray:
    """Untreated risk of death by ``horizon``: 1 - exp(-(h/scale)^shape * exp(eta))."""
    h0 = (horizon / spec.weibull_scale) ** spec.weibull_shape
    return -np.expm1(-h0 * np.exp(log_hazard_ratio(spec, covariates)))


def _draw_covariates(spec: SynthSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    X = np.empty((n, spec.K))
    p = iter(spec.binary_p)
    for k, kind in enumerate(spec.kinds):
        if kind == BINARY:
            X[:, k] = rng.random(n) < next(p)
        else:
            X[:, k] = rng.standard_normal(n)
    return X


# Target mass per risk decile for the mid-heavy shape: 68% in [0.4, 0.8),
# 5% below 0.3, 3% above 0.9.
MID_HEAVY_TARGET = (0.01, 0.015, 0.025, 0.12, 0.18, 0.18, 0.17, 0.15, 0.12, 0.03)


def _pilot_density(spec: SynthSpec, rng: np.random.Generator, bins: int, pilot: int):
    r = true_risks(spec, _draw_covariates(spec, rng, pilot))
    return np.bincount(np.minimum((r * bins).astype(int), bins - 1), minlength=bins) / pilot


def _binned(prob: np.ndarray):
    bins = len(prob)

    def accept(risk):
        return prob[np.minimum((risk * bins).astype(int), bins - 1)]

    return accept


def _target_accept(spec: SynthSpec, rng: np.random.Generator, target=MID_HEAVY_TARGET,
                   pilot: int = 20000):
    """Accept probabilities that reshape the natural risk histogram into ``target``."""
    target = np.asarray(target, dtype=float)
    dens = _pilot_density(spec, rng, len(target), pilot)
    need = target > 0
    if np.any(need & (dens == 0)):
        raise ShapeInfeasibleError("natural risk distribution misses a target risk bin")
    ratio = np.where(need, target / np.where(dens > 0, dens, 1.0), 0.0)
    return _binned(ratio / ratio.max())


def _uniform_accept(spec: SynthSpec, rng: np.random.Generator, bins: int = 20,
                    pilot: int = 20000):
    dens = _pilot_density(spec, rng, bins, pilot)
    floor = np.quantile(dens[dens > 0], 0.1)
    prob = np.where(dens > 0, np.minimum(1.0, floor / np.where(dens > 0, dens, 1.0)), 0.0)
    return _binned(prob)


def _sample_covariates(spec: SynthSpec, rng: np.random.Generator, n: int, accept) -> np.ndarray:
    if accept is None:
        return _draw_covariates(spec, rng, n)
    kept, have, draws = [], 0, 0
    batch = max(256, 4 * n)
    while have < n:
        X = _draw_covariates(spec, rng, batch)
        draws += batch
        ok = rng.random(batch) < accept(true_risks(spec, X))
        kept.append(X[ok])
        have += int(ok.sum())
        if draws > MAX_DRAWS_PER_PATIENT * max(have, 1):
            raise ShapeInfeasibleError(
                f"risk shape {spec.risk_shape!r} accepted {have} of {draws} draws")
    return np.vstack(kept)[:n]


def generate(spec: SynthSpec) -> tuple[Cohort, GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    accept = None
    if spec.risk_shape == MID_HEAVY:
        accept = _target_accept(spec, rng)
    elif spec.risk_shape == UNIFORM_TARGET:
        accept = _uniform_accept(spec, rng)
    n = spec.n_alone + spec.n_chemo
    X = _sample_covariates(spec, rng, n, accept)
    chemo = np.arange(n) >= spec.n_alone
    eta = log_hazard_ratio(spec, X, chemo)
    e1 = rng.exponential(size=n)
    event_time = spec.weibull_scale * (e1 * np.exp(-eta)) ** (1.0 / spec.weibull_shape)
    event_time = np.maximum(event_time, 1e-6)
    dropout = (rng.exponential(1.0 / spec.dropout_rate, size=n) if spec.dropout_rate > 0
               else np.full(n, np.inf))
    censor = np.minimum(spec.administrative_months, dropout)
    time = np.maximum(np.minimum(event_time, censor), 1e-6)
    event = event_time <= censor
    ids = [f"{spec.id_prefix}{'C' if c else 'A'}{i:05d}" for i, c in enumerate(chemo)]
    arm = np.where(chemo, CHEMO, ALONE)
    cohort = Cohort(spec.schema, ids, X, time, event, arm,
                    provenance=f"synth[seed={spec.seed},shape={spec.risk_shape}]")
    risk = true_risks(spec, X)
    truth = GroundTruth(cohort.ids, risk, assign(risk, build_scheme(8, PAPER_DEFAULT)))
    return cohort, truth


def write_truth(path: str | Path, truth: GroundTruth) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "true_risk_60", "true_stratum"])
        for i, r, s in zip(truth.ids, truth.true_risk_60, truth.true_stratum):
            w.writerow([i, format(float(r), ".17g"), int(s)])
