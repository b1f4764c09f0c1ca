"""Cox proportional hazards regression (Efron ties, Breslow baseline)."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cohort import Cohort, CovariateSchema, PatientRecord

FORMAT_VERSION = 1


class CoxError(RuntimeError):
    pass


class NoEventsError(CoxError):
    pass


class DivergenceError(CoxError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 100
    rel_tolerance: float = 1e-9
    step_halving_max: int = 20
    ridge_epsilon: float = 1e-8
    tie_method: str = "efron"
    divergence_bound: float = 50.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.rel_tolerance <= 0:
            raise ValueError("rel_tolerance must be > 0")
        if self.tie_method != "efron":
            raise ValueError("only Efron tie handling is supported")


@dataclass(frozen=True, eq=False)
class CoxModel:
    """A fitted Cox model.

    The baseline cumulative hazard is a right-continuous step function with
    jumps at ``baseline_times``, defined for a record sitting exactly at
    ``centering_means``.
    """

    schema: CovariateSchema
    beta: np.ndarray
    centering_means: np.ndarray
    baseline_times: np.ndarray
    baseline_cumhaz: np.ndarray
    iterations: int
    final_nlpl: float
    converged: bool
    std_errors: np.ndarray | None = None
    dropped: tuple[str, ...] = ()
    arm: str | None = None
    name: str = ""

    @property
    def baseline_cum_hazard(self) -> list[tuple[float, float]]:
        return list(zip(self.baseline_times.tolist(), self.baseline_cumhaz.tolist()))

    def cumhaz0(self, t) -> np.ndarray:
        """H0 at time(s) ``t``; constant after the last step."""
        idx = np.searchsorted(self.baseline_times, np.asarray(t, dtype=float), side="right")
        padded = np.concatenate([[0.0], self.baseline_cumhaz])
        return padded[idx]

    def linear_predictor(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return (X - self.centering_means) @ self.beta

    def predict_risk(self, X, horizon: float = 60.0) -> np.ndarray:
        """1 - S(horizon | x) for each row of ``X``."""
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        h0 = float(self.cumhaz0(horizon))
        risk = -np.expm1(-h0 * np.exp(self.linear_predictor(X)))
        return np.clip(risk, 0.0, 1.0)

    def predict_survival(self, X, times) -> np.ndarray:
        """Survival matrix of shape (n_rows, n_times)."""
        h0 = self.cumhaz0(times)
        return np.exp(-np.outer(np.exp(self.linear_predictor(X)), h0))

    def with_tags(self, *, arm: str | None = None, name: str | None = None) -> "CoxModel":
        return CoxModel(self.schema, self.beta, self.centering_means, self.baseline_times,
                        self.baseline_cumhaz, self.iterations, self.final_nlpl, self.converged,
                        self.std_errors, self.dropped, arm if arm is not None else self.arm,
                        name if name is not None else self.name)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "arm": self.arm,
            "schema": self.schema.to_dict(),
            "beta": self.beta.tolist(),
            "centering_means": self.centering_means.tolist(),
            "std_errors": None if self.std_errors is None else self.std_errors.tolist(),
            "baseline_cum_hazard": [[t, h] for t, h in self.baseline_cum_hazard],
            "dropped": list(self.dropped),
            "fit_info": {"iterations": self.iterations, "final_nlpl": self.final_nlpl,
                         "converged": self.converged},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        steps = np.asarray(d["baseline_cum_hazard"], dtype=float).reshape(-1, 2)
        se = d.get("std_errors")
        info = d["fit_info"]
        return cls(CovariateSchema.from_dict(d["schema"]), np.asarray(d["beta"], dtype=float),
                   np.asarray(d["centering_means"], dtype=float), steps[:, 0], steps[:, 1],
                   int(info["iterations"]), float(info["final_nlpl"]), bool(info["converged"]),
                   None if se is None else np.asarray(se, dtype=float),
                   tuple(d.get("dropped", ())), d.get("arm"), d.get("name", ""))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CoxModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- partial likelihood --------------------------------------------------------

class _RiskSets:
    """Sort order and tie structure of a survival sample; reused across Newton steps."""

    def __init__(self, time: np.ndarray, event: np.ndarray):
        order = np.argsort(time, kind="stable")
        self.order = order
        t = time[order]
        e = event[order]
        self.ev = np.flatnonzero(e)
        ev_t = t[self.ev]
        self.uniq, self.first, self.counts = np.unique(ev_t, return_index=True, return_counts=True)
        # risk set of an event time = every record with time >= that time
        self.start = np.searchsorted(t, self.uniq, side="left")
        self.group = np.repeat(np.arange(len(self.uniq)), self.counts)
        self.frac = (np.arange(len(self.ev)) - self.first[self.group]) / self.counts[self.group]


def _efron(X: np.ndarray, rs: _RiskSets, beta: np.ndarray, hessian: bool = True):
    """Efron negative log partial likelihood, gradient and (optionally) Hessian.

    ``X`` must already be in ``rs.order``.
    """
    eta = X @ beta
    m = eta.max() if eta.size else 0.0
    w = np.exp(eta - m)
    wX = w[:, None] * X
    c0 = np.cumsum(w[::-1])[::-1]
    c1 = np.cumsum(wX[::-1], axis=0)[::-1]
    ev, g, frac = rs.ev, rs.group, rs.frac
    s0, s1 = c0[rs.start], c1[rs.start]
    d0 = np.add.reduceat(w[ev], rs.first)
    d1 = np.add.reduceat(wX[ev], rs.first, axis=0)
    den = s0[g] - frac * d0[g]
    num = s1[g] - frac[:, None] * d1[g]
    nlpl = -(eta[ev].sum() - (np.log(den).sum() + m * len(ev)))
    mean = num / den[:, None]
    grad = -(X[ev].sum(axis=0) - mean.sum(axis=0))
    if not hessian:
        return nlpl, grad, None
    wXX = wX[:, :, None] * X[:, None, :]
    c2 = np.cumsum(wXX[::-1], axis=0)[::-1]
    s2 = c2[rs.start]
    d2 = np.add.reduceat(wXX[ev], rs.first, axis=0)
    second = (s2[g] - frac[:, None, None] * d2[g]) / den[:, None, None]
    hess = second.sum(axis=0) - mean.T @ mean
    return nlpl, grad, hess


def nlpl_and_gradient(cohort: Cohort, beta) -> tuple[float, np.ndarray]:
    """Efron negative log partial likelihood of ``cohort`` at ``beta`` and its gradient."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (len(cohort.schema),):
        raise ValueError(f"beta has shape {beta.shape}, expected ({len(cohort.schema)},)")
    rs = _RiskSets(cohort.time, cohort.event)
    nlpl, grad, _ = _efron(cohort.X[rs.order], rs, beta, hessian=False)
    return float(nlpl), grad


def breslow(X_centered: np.ndarray, time: np.ndarray, event: np.ndarray, beta: np.ndarray):
    """Breslow baseline cumulative hazard at the distinct event times."""
    rs = _RiskSets(time, event)
    w = np.exp(X_centered[rs.order] @ beta)
    c0 = np.cumsum(w[::-1])[::-1]
    jumps = rs.counts / c0[rs.start]
    return rs.uniq.astype(float), np.cumsum(jumps)


def fit(cohort: Cohort, config: FitConfig | None = None, *, arm: str | None = None,
        name: str = "") -> CoxModel:
    """Fit a Cox model by damped Newton-Raphson on the Efron partial likelihood.

    Covariates constant across the cohort are dropped (coefficient fixed at 0)
    with a warning. Non-convergence returns a model with ``converged=False``.
    """
    config = config or FitConfig()
    if cohort.has_missing:
        raise ValueError("cohort has missing covariates; impute first")
    if cohort.n_events == 0:
        raise NoEventsError("cannot fit a Cox model without events")
    X = cohort.X
    K = X.shape[1]
    means = X.mean(axis=0) if cohort.n else np.zeros(K)
    sds = X.std(axis=0)
    active = sds > 0
    dropped = tuple(n for n, a in zip(cohort.schema.names, active) if not a)
    if dropped:
        warnings.warn(f"dropping constant covariates {list(dropped)}", stacklevel=2)
    Xc = (X - means)[:, active]
    rs = _RiskSets(cohort.time, cohort.event)
    Xs = Xc[rs.order]
    b = np.zeros(Xs.shape[1])
    ridge = config.ridge_epsilon * np.eye(len(b))
    nlpl, grad, hess = _efron(Xs, rs, b)
    converged = len(b) == 0
    it = 0
    while not converged and it < config.max_iterations:
        it += 1
        step = np.linalg.solve(hess + ridge, grad)
        scale = 1.0
        for _ in range(config.step_halving_max + 1):
            cand = b - scale * step
            new, new_grad, new_hess = _efron(Xs, rs, cand)
            if np.isfinite(new) and new <= nlpl:
                break
            scale *= 0.5
        else:
            # no decrease possible along the Newton direction: at numerical optimum
            converged = True
            break
        rel = abs(nlpl - new) / max(abs(new), 1e-300)
        b, nlpl, grad, hess = cand, new, new_grad, new_hess
        if np.any(np.abs(b) * sds[active] > config.divergence_bound):
            raise DivergenceError(
                "coefficients diverging (perfect separation?): "
                f"{dict(zip(np.array(cohort.schema.names)[active].tolist(), b.round(2).tolist()))}")
        if rel < config.rel_tolerance:
            converged = True
    if not converged:
        warnings.warn(f"Cox fit did not converge in {config.max_iterations} iterations",
                      ConvergenceWarning, stacklevel=2)
    elif len(b):
        # the likelihood can flatten out while a coefficient still runs off to
        # infinity; at a genuine optimum the remaining Newton step is negligible
        rest = np.abs(np.linalg.solve(hess + ridge, grad)) * sds[active]
        if np.any(rest > 1e-3 * np.maximum(1.0, np.abs(b) * sds[active])):
            raise DivergenceError("a coefficient appears infinite (perfect separation?)")
    beta = np.zeros(K)
    beta[active] = b
    se = np.full(K, np.nan)
    try:
        cov = np.linalg.inv(hess + ridge)
        se[active] = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        pass
    times, cumhaz = breslow(X - means, cohort.time, cohort.event, beta)
    return CoxModel(cohort.schema, beta, means, times, cumhaz, it, float(nlpl), converged,
                    se, dropped, arm, name)


def linear_predictor(model: CoxModel, record: PatientRecord) -> float:
    return float(model.linear_predictor(np.array([record.covariates], dtype=float))[0])


def risk_at(model: CoxModel, record: PatientRecord, horizon_months: float = 60.0) -> float:
    """Probability of death by ``horizon_months`` for one record."""
    return float(model.predict_risk(np.array([record.covariates], dtype=float), horizon_months)[0])
