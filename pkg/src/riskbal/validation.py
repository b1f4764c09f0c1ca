"""Optimism-corrected bootstrap validation and per-stratum external evaluation."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import cox
from .cohort import Cohort, CohortError
from .metrics import (MetricReport, UndefinedMetricError, _percentile_ci, auc_at,
                      concordance_counts, harrells_c, ici_at)
from .stratify import StratumScheme, assign, build_scheme

METRICS = ("c", "auc", "ici")

TrainProcedure = Callable[[Cohort], "tuple[cox.CoxModel, Cohort]"]


class ValidationError(RuntimeError):
    pass


class ArmMismatchError(ValueError):
    pass


class SelfEvaluationWarning(UserWarning):
    pass


def _scores(model: cox.CoxModel, cohort: Cohort, horizon: float, metrics) -> dict:
    # rank metrics use the linear predictor: risk saturates at 1.0 and would tie
    lp = model.linear_predictor(cohort.X)
    risks = model.predict_risk(cohort.X, horizon)
    out = {}
    fns = {"c": lambda: harrells_c(lp, cohort.time, cohort.event),
           "auc": lambda: auc_at(lp, cohort.time, cohort.event, horizon),
           "ici": lambda: ici_at(risks, cohort.time, cohort.event, horizon)}
    for m in metrics:
        try:
            out[m] = fns[m]()
        except UndefinedMetricError:
            out[m] = None
    return out


@dataclass(frozen=True)
class OptimismReport:
    apparent: MetricReport
    optimism: dict[str, float | None]
    corrected: dict[str, float | None]
    replicates: int
    failures: int
    ci: dict[str, tuple[float, float] | None] = field(default_factory=dict)
    boot_apparent: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    boot_test: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def as_dict(self) -> dict:
        return {"apparent": self.apparent.as_dict(), "optimism": self.optimism,
                "corrected": self.corrected, "ci": self.ci, "replicates": self.replicates,
                "failures": self.failures}


def bootstrap_validate(train_procedure: TrainProcedure, cohort: Cohort, replicates: int = 200,
                       horizon: float = 60.0, seed: int = 0,
                       metrics=METRICS) -> OptimismReport:
    """Efron's optimism bootstrap.

    Each replicate re-runs the whole procedure on a resample of ``cohort``;
    optimism is the mean of (score on own resample - score on the original
    evaluation data), and corrected = apparent - optimism.
    """
    if replicates < 50:
        raise ValueError("use at least 50 bootstrap replicates")
    metrics = tuple(metrics)
    model, eval_orig = train_procedure(cohort)
    app = _scores(model, eval_orig, horizon, metrics)
    apparent = MetricReport(app.get("c"), app.get("auc"), app.get("ici"), eval_orig.n,
                            eval_orig.n_events, horizon=horizon)
    children = np.random.SeedSequence(seed).spawn(replicates)
    boot_app = {m: [] for m in metrics}
    boot_test = {m: [] for m in metrics}
    failures = 0
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, cohort.n, cohort.n)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m_b, eval_b = train_procedure(cohort.resample(idx))
            own = _scores(m_b, eval_b, horizon, metrics)
            test = _scores(m_b, eval_orig, horizon, metrics)
        except (cox.CoxError, CohortError, UndefinedMetricError, np.linalg.LinAlgError):
            failures += 1
            continue
        for m in metrics:
            boot_app[m].append(np.nan if own[m] is None else own[m])
            boot_test[m].append(np.nan if test[m] is None else test[m])
    if failures > 0.2 * replicates:
        raise ValidationError(f"{failures} of {replicates} bootstrap replicates failed")
    optimism, corrected, ci = {}, {}, {}
    for m in metrics:
        a, t = np.array(boot_app[m]), np.array(boot_test[m])
        ok = ~(np.isnan(a) | np.isnan(t))
        if app[m] is None or not ok.any():
            optimism[m] = corrected[m] = ci[m] = None
            continue
        optimism[m] = float(np.mean(a[ok] - t[ok]))
        corrected[m] = float(app[m] - optimism[m])
        ci[m] = _percentile_ci(t[ok].tolist())
    return OptimismReport(apparent, optimism, corrected, replicates - failures, failures, ci,
                          {m: np.array(v) for m, v in boot_app.items()},
                          {m: np.array(v) for m, v in boot_test.items()})


ALPHA_GRID = (10, 15, 20, 25, 30, 40, 50)


@dataclass(frozen=True)
class AlphaTuning:
    arm: str
    mode: str
    grid: tuple[int, ...]
    apparent: dict[int, float]
    corrected: dict[int, float]
    failures: dict[int, int]

    @property
    def best(self) -> int:
        """Alpha with the highest corrected C; the smaller alpha wins ties."""
        return max(self.grid, key=lambda a: (self.corrected[a], -a))


TUNE_EVAL_SETS = ("balanced", "arm", "strata-mean")
DEFAULT_TUNE_EVAL = "strata-mean"


def tune_alpha(cohort: Cohort, grid=ALPHA_GRID, mode: str = "one-to-one",
               replicates: int = 50, seed: int = 0, scheme: StratumScheme | None = None,
               horizon: float = 60.0, fit_config: cox.FitConfig | None = None,
               eval_on: str = DEFAULT_TUNE_EVAL) -> dict[str, AlphaTuning]:
    """Optimism-corrected Harrell's C of Models 3A/3B for every alpha in ``grid``.

    ``eval_on`` picks the data each model is scored on:

    ``"balanced"``
        its own balanced training arm. Numerically identical to
        :func:`bootstrap_validate` on ``model_3(arm, mode, alpha)`` with the
        same seed.
    ``"arm"``
        the full (unbalanced) arm of the cohort, common to every alpha.
    ``"strata-mean"``
        mean within-stratum C over the full arm, strata taken from the same
        baseline model used for balancing; common to every alpha.

    Each resample is stratified once and balanced once per alpha; the
    balancing is shared by both arms.
    """
    if eval_on not in TUNE_EVAL_SETS:
        raise ValueError(f"eval_on must be one of {TUNE_EVAL_SETS}")
    from .cohort import ALONE, CHEMO
    from .matching import balance_cohort
    from .stratify import stratify

    if replicates < 50:
        raise ValueError("use at least 50 bootstrap replicates")
    scheme = scheme or build_scheme(8)
    fit_config = fit_config or cox.FitConfig()
    arms = (ALONE, CHEMO)
    grid = tuple(grid)

    def run(data: Cohort):
        strat = stratify(data, scheme, horizon, fit_config)
        views = {arm: (data.with_arm(arm), strat.stratum_index[data.arm == arm]) for arm in arms}
        out = {}
        for a in grid:
            try:
                bal = balance_cohort(strat, a, mode)
            except CohortError:
                out[a] = None
                continue
            out[a] = {}
            for arm in arms:
                train = bal.arm(arm)
                view = (train, None) if eval_on == "balanced" else views[arm]
                try:
                    out[a][arm] = (cox.fit(train, fit_config, arm=arm), view)
                except cox.CoxError:
                    out[a][arm] = None
        return out

    def score(model, view):
        data, strata = view
        lp = model.linear_predictor(data.X)
        if eval_on != "strata-mean":
            try:
                return harrells_c(lp, data.time, data.event)
            except UndefinedMetricError:
                return None
        cs = []
        for s in np.unique(strata):
            m = strata == s
            try:
                cs.append(harrells_c(lp[m], data.time[m], data.event[m]))
            except UndefinedMetricError:
                pass
        return float(np.mean(cs)) if cs else None

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        base = run(cohort)
        apparent = {arm: {} for arm in arms}
        for a in grid:
            for arm in arms:
                fitted = base[a][arm] if base[a] else None
                apparent[arm][a] = None if fitted is None else score(*fitted)
        diffs = {arm: {a: [] for a in grid} for arm in arms}
        fails = {arm: {a: 0 for a in grid} for arm in arms}
        for child in np.random.SeedSequence(seed).spawn(replicates):
            rng = np.random.default_rng(child)
            idx = rng.integers(0, cohort.n, cohort.n)
            try:
                boot = run(cohort.resample(idx))
            except (cox.CoxError, CohortError, np.linalg.LinAlgError):
                boot = {a: None for a in grid}
            for a in grid:
                for arm in arms:
                    fitted = boot[a][arm] if boot[a] else None
                    orig = base[a][arm] if base[a] else None
                    own = None if fitted is None else score(*fitted)
                    test = None if (fitted is None or orig is None) else score(fitted[0], orig[1])
                    if own is None or test is None:
                        fails[arm][a] += 1
                    else:
                        diffs[arm][a].append(own - test)
    out = {}
    for arm in arms:
        corrected = {}
        for a in grid:
            d = diffs[arm][a]
            ok = apparent[arm][a] is not None and d and fails[arm][a] <= 0.2 * replicates
            corrected[a] = float(apparent[arm][a] - np.mean(d)) if ok else -np.inf
        out[arm] = AlphaTuning(arm, mode, grid, apparent[arm], corrected, fails[arm])
    return out


# -- external validation -------------------------------------------------------

@dataclass(frozen=True)
class StratumRow:
    stratum: int
    lo: float
    hi: float
    n: int
    n_events: int
    c: float | None
    auc: float | None
    comparable_pairs: int


@dataclass(frozen=True)
class StratifiedReport:
    model_name: str
    scheme: StratumScheme
    rows: tuple[StratumRow, ...]
    overall: MetricReport
    self_evaluation: bool = False

    def as_dict(self) -> dict:
        return {"model": self.model_name, "edges": list(self.scheme.edges),
                "self_evaluation": self.self_evaluation, "overall": self.overall.as_dict(),
                "strata": [r.__dict__ for r in self.rows]}


def cohort_arm(cohort: Cohort) -> str:
    arms = set(cohort.arm.tolist())
    if len(arms) != 1:
        raise ArmMismatchError(f"external cohort must hold a single arm, found {sorted(arms)}")
    return arms.pop()


def check_arm(model: cox.CoxModel, cohort: Cohort) -> None:
    arm = cohort_arm(cohort)
    if model.arm is not None and model.arm != arm:
        raise ArmMismatchError(f"model {model.name!r} was trained on arm {model.arm!r} and "
                               f"cannot be evaluated on a {arm!r} cohort")


def binning_model(external: Cohort, config: cox.FitConfig | None = None) -> cox.CoxModel:
    """Cox model fitted on the external cohort itself, used only to bin it."""
    return cox.fit(external, config, arm=cohort_arm(external), name="binning")


def stratified_external_eval(model: cox.CoxModel, external: Cohort, S: int = 8,
                             horizon: float = 60.0, *, scheme: StratumScheme | None = None,
                             binner: cox.CoxModel | None = None) -> StratifiedReport:
    """Per-stratum C and time-dependent AUC of ``model`` on an external cohort.

    Strata come from a separate Cox model fitted on ``external`` (or ``binner``).
    Metrics are ``None`` where undefined (fewer than 2 comparable pairs for C,
    no case or no control for AUC).
    """
    check_arm(model, external)
    ext = external.select(model.schema.names)
    scheme = scheme or build_scheme(S)
    binner = binner or binning_model(ext)
    # refits on a column-selected copy can differ in the last bits
    self_eval = (binner.schema == model.schema
                 and np.allclose(binner.beta, model.beta, rtol=1e-9, atol=1e-12)
                 and np.allclose(binner.centering_means, model.centering_means,
                                 rtol=1e-9, atol=1e-12))
    if self_eval:
        warnings.warn("evaluated model equals the binning model", SelfEvaluationWarning,
                      stacklevel=2)
    strata = assign(binner.predict_risk(ext.X, horizon), scheme)
    lp = model.linear_predictor(ext.X)
    rows = []
    for s in range(scheme.S):
        m = strata == s
        r, t, e = lp[m], ext.time[m], ext.event[m]
        c = auc = None
        pairs = 0
        if m.any():
            _, _, pairs = concordance_counts(r, t, e)
            if pairs >= 2:
                c = harrells_c(r, t, e)
            try:
                auc = auc_at(r, t, e, horizon)
            except UndefinedMetricError:
                pass
        lo, hi = scheme.bounds(s)
        rows.append(StratumRow(s, lo, hi, int(m.sum()), int(e.sum()), c, auc, pairs))
    overall = _overall(model, ext, horizon)
    return StratifiedReport(model.name, scheme, tuple(rows), overall, self_eval)


def _overall(model: cox.CoxModel, cohort: Cohort, horizon: float) -> MetricReport:
    sc = _scores(model, cohort, horizon, METRICS if cohort.n >= 50 else ("c", "auc"))
    return MetricReport(sc["c"], sc["auc"], sc.get("ici"), cohort.n, cohort.n_events,
                        horizon=horizon)


def evaluate_model(model: cox.CoxModel, cohort: Cohort, horizon: float = 60.0) -> MetricReport:
    """In-sample metrics of ``model`` on ``cohort``."""
    return _overall(model, cohort.select(model.schema.names), horizon)


def _num(v) -> str:
    return "" if v is None else format(float(v), ".10g")


def write_stratified_csv(path: str | Path, reports, extra_columns: dict | None = None) -> None:
    """Per-stratum table ``stratum,lo,hi,n,n_events,C,AUC`` (plus ``model`` and extras)."""
    extra_columns = extra_columns or {}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*extra_columns, "model", "stratum", "lo", "hi", "n", "n_events", "C", "AUC"])
        for rep in reports:
            for r in rep.rows:
                w.writerow([*extra_columns.values(), rep.model_name, r.stratum, f"{r.lo:g}",
                            f"{r.hi:g}", r.n, r.n_events, _num(r.c), _num(r.auc)])


def write_json(path: str | Path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True, default=_jsonable) + "\n",
                          encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
