"""``riskbal`` command line.

Every command reads an optional flat ``key = value`` config file (``#``
comments allowed, no sections); command-line flags override file values.
Documented keys and defaults are in :data:`DEFAULTS`.

Inputs left empty fall back to synthetic data drawn from ``world`` with
``seed``: a mid-heavy development cohort and one uniform-target external
cohort per arm.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
On failure the output directory keeps whatever was written plus a
``FAILED`` marker naming the error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import logging
import platform
import sys
import time
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__, cox
from .cohort import (ALONE, ARMS, CHEMO, KINDS, Cohort, CohortError, CovariateSchema, impute,
                     load_cohort, write_cohort)
from .experiments import MIN_TAIL_EVENTS, PAPER_LIKE_WORLD
from .matching import MODES, ONE_TO_ONE, RELAXED, balance_cohort, balanced_union, write_matches
from .procedures import Procedure, model_1, model_2, model_3, model_smote, model_grid
from .smote import SmoteConfig, is_synthetic
from .stratify import (POLICIES, QUANTILE, DegenerateBinsError, build_scheme, stratify,
                       write_histogram)
from .synth import (MID_HEAVY, RISK_SHAPES, UNIFORM_TARGET, ShapeInfeasibleError, SynthSpec,
                    generate, write_truth)
from .validation import (ALPHA_GRID, DEFAULT_TUNE_EVAL, TUNE_EVAL_SETS, ArmMismatchError,
                         ValidationError, bootstrap_validate, cohort_arm, evaluate_model,
                         stratified_external_eval, tune_alpha, write_json)

log = logging.getLogger("riskbal")

MANIFEST_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

WORLDS = {"paper-like": PAPER_LIKE_WORLD, "homogeneous": SynthSpec()}
MODEL_NAMES = ("1", "2A", "2B", "3A", "3B", "SA", "SB")

DEFAULTS = {
    "dev_cohort": "",            # CSV; empty = synthetic mid-heavy cohort
    "external": "",              # comma list of single-arm CSVs; empty = synthetic
    "covariates": "",            # name:kind,... for CSV inputs; empty = synthetic schema
    "features": "",              # covariate subset used for modelling; empty = all
    "feature_subsets": "all",    # sensitivity: ';'-separated subsets, 'all' = every covariate
    "policy": "paper-default",   # paper-default | equal-width
    "strata": "8",
    "strata_set": "7,8,9,10",    # validate-external and sensitivity
    "alpha": "grid",             # integer or 'grid'
    "alpha_grid": ",".join(map(str, ALPHA_GRID)),
    "tune_eval": DEFAULT_TUNE_EVAL,
    "tune_replicates": "50",
    "mode": "one-to-one",        # one-to-one | relaxed; experiment always runs both
    "replicates": "200",
    "horizon": "60",
    "seed": "0",
    "out": "riskbal-out",
    "model": "1",                # fit: 1, 2A, 2B, 3A, 3B, SA, SB
    "models": "",                # validate-external: comma list of model JSON files
    "world": "paper-like",       # synthetic world: paper-like | homogeneous
    "n_alone": "602",
    "n_chemo": "1197",
    "n_external": "1000",        # per arm
    "risk_shape": "mid-heavy",   # synth command
    "smote_k": "5",
    "smote_ratio": "1.0",
    "record_timings": "no",      # yes = timings in the manifest (breaks byte-identity)
}


class ConfigError(ValueError):
    pass


# quantile edges depend on the data being binned, so they cannot be fixed per run
CLI_POLICIES = tuple(p for p in POLICIES if p != QUANTILE)


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    dev_cohort: str
    external: tuple[str, ...]
    covariates: str
    features: tuple[str, ...]
    feature_subsets: tuple[tuple[str, ...], ...]
    policy: str
    strata: int
    strata_set: tuple[int, ...]
    alpha: int | None
    alpha_grid: tuple[int, ...]
    tune_eval: str
    tune_replicates: int
    mode: str
    replicates: int
    horizon: float
    seed: int
    out: str
    model: str
    models: tuple[str, ...]
    world: str
    n_alone: int
    n_chemo: int
    n_external: int
    risk_shape: str
    smote_k: int
    smote_ratio: float
    record_timings: bool

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def scheme(self):
        return build_scheme(self.strata, self.policy)

    @property
    def fit_config(self) -> cox.FitConfig:
        return cox.FitConfig()

    @property
    def smote(self) -> SmoteConfig:
        return SmoteConfig(self.smote_k, self.smote_ratio, self.seed)


def read_config_file(path: str | Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = dict(parser["run"])
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return values


def _split(v: str, sep: str = ",") -> tuple[str, ...]:
    return tuple(p.strip() for p in v.split(sep) if p.strip())


def _int(key, v, lo=None, hi=None) -> int:
    try:
        x = int(v)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {v!r}") from None
    if (lo is not None and x < lo) or (hi is not None and x > hi):
        raise ConfigError(f"{key}={x} outside [{lo}, {hi}]")
    return x


def _choice(key, v, allowed):
    if v not in allowed:
        raise ConfigError(f"{key} must be one of {tuple(allowed)}, got {v!r}")
    return v


def build_config(values: dict[str, str]) -> RunConfig:
    v = {**DEFAULTS, **{k: str(x) for k, x in values.items() if x is not None}}
    alpha = None if v["alpha"].strip() == "grid" else _int("alpha", v["alpha"], 1)
    subsets = tuple(() if s == "all" else _split(s) for s in _split(v["feature_subsets"], ";"))
    try:
        horizon = float(v["horizon"])
        ratio = float(v["smote_ratio"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if horizon <= 0:
        raise ConfigError("horizon must be > 0")
    if not 0 < ratio <= 1:
        raise ConfigError("smote_ratio must lie in (0, 1]")
    grid = tuple(_int("alpha_grid", a, 1) for a in _split(v["alpha_grid"]))
    if not grid:
        raise ConfigError("alpha_grid is empty")
    policy = _choice("policy", v["policy"], CLI_POLICIES)
    strata = _int("strata", v["strata"], 2, 20)
    strata_set = tuple(_int("strata_set", s, 2, 20) for s in _split(v["strata_set"]))
    for S in {strata, *strata_set}:
        try:
            build_scheme(S, policy)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return RunConfig(
        dev_cohort=v["dev_cohort"].strip(),
        external=_split(v["external"]),
        covariates=v["covariates"].strip(),
        features=_split(v["features"]),
        feature_subsets=subsets or ((),),
        policy=policy,
        strata=strata,
        strata_set=strata_set,
        alpha=alpha,
        alpha_grid=grid,
        tune_eval=_choice("tune_eval", v["tune_eval"], TUNE_EVAL_SETS),
        tune_replicates=_int("tune_replicates", v["tune_replicates"], 50),
        mode=_choice("mode", v["mode"], MODES),
        replicates=_int("replicates", v["replicates"], 50),
        horizon=horizon,
        seed=_int("seed", v["seed"], 0),
        out=v["out"],
        model=_choice("model", v["model"], MODEL_NAMES),
        models=_split(v["models"]),
        world=_choice("world", v["world"], WORLDS),
        n_alone=_int("n_alone", v["n_alone"], 1),
        n_chemo=_int("n_chemo", v["n_chemo"], 1),
        n_external=_int("n_external", v["n_external"], 1),
        risk_shape=_choice("risk_shape", v["risk_shape"], RISK_SHAPES),
        smote_k=_int("smote_k", v["smote_k"], 1),
        smote_ratio=ratio,
        record_timings=v["record_timings"].strip().lower() in ("1", "yes", "true", "on"),
    )


# -- inputs --------------------------------------------------------------------

def _schema(cfg: RunConfig) -> CovariateSchema:
    if not cfg.covariates:
        return WORLDS[cfg.world].schema
    pairs = []
    for item in _split(cfg.covariates):
        name, _, kind = item.partition(":")
        if kind not in KINDS:
            raise ConfigError(f"covariate {name!r}: kind must be one of {KINDS}")
        pairs.append((name.strip(), kind))
    return CovariateSchema.from_pairs(pairs)


def _world(cfg: RunConfig) -> SynthSpec:
    return WORLDS[cfg.world].derive(n_alone=cfg.n_alone, n_chemo=cfg.n_chemo, seed=cfg.seed)


def _features(cfg: RunConfig, cohort: Cohort, subset=None) -> Cohort:
    names = cfg.features if subset is None else subset
    if not names:
        return cohort
    missing = [n for n in names if n not in cohort.schema.names]
    if missing:
        raise ConfigError(f"unknown features {missing}")
    return cohort.select(names)


class Run:
    """Output directory, manifest and timings of one command invocation."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command, self.cfg = command, cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "FAILED").unlink(missing_ok=True)
        self.inputs: dict[str, str] = {}
        self.notes: dict = {}
        self.timings: dict[str, float] = {}
        self._t = time.perf_counter()

    def path(self, *parts) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def lap(self, stage: str) -> None:
        now = time.perf_counter()
        self.timings[stage] = round(now - self._t, 3)
        log.info("%s: %.2fs", stage, now - self._t)
        self._t = now

    def load(self, path: str) -> Cohort:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"input file not found: {path}")
        self.inputs[str(path)] = hashlib.sha256(p.read_bytes()).hexdigest()
        cohort = load_cohort(p, _schema(self.cfg))
        cohort, report = impute(cohort)
        if report.total_missing:
            self.notes.setdefault("imputation", {})[str(path)] = {
                c: asdict(col) for c, col in report.columns.items()}
        return cohort

    def dev(self) -> Cohort:
        cfg = self.cfg
        if cfg.dev_cohort:
            cohort = self.load(cfg.dev_cohort)
        else:
            cohort, _ = generate(_world(cfg).derive(risk_shape=MID_HEAVY))
        return _features(cfg, cohort)

    def externals(self) -> dict[str, Cohort]:
        """Single-arm external cohorts keyed by arm."""
        cfg = self.cfg
        out = {}
        if cfg.external:
            for path in cfg.external:
                c = self.load(path)
                arm = cohort_arm(c)
                if arm in out:
                    raise ArmMismatchError(f"two external cohorts for arm {arm!r}")
                out[arm] = c
        else:
            ext, _ = generate(WORLDS[cfg.world].derive(
                risk_shape=UNIFORM_TARGET, seed=1_000_003 + cfg.seed, n_alone=cfg.n_external,
                n_chemo=cfg.n_external, id_prefix="x"))
            out = {arm: ext.with_arm(arm) for arm in ARMS}
        return out

    def manifest(self, status: str = "ok", **extra) -> None:
        payload = {
            "command": self.command,
            "status": status,
            "config": self.cfg.echo(),
            "seed": self.cfg.seed,
            "inputs": self.inputs,
            "versions": {"riskbal": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "format_versions": {"manifest": MANIFEST_VERSION, "model": cox.FORMAT_VERSION},
            **self.notes,
            **extra,
        }
        if self.cfg.record_timings:
            payload["timings"] = self.timings
        write_json(self.path("manifest.json"), payload)


# -- shared pieces -------------------------------------------------------------

def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".10g")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _model_file(name: str) -> str:
    return "model_" + name.replace(" ", "_") + ".json"


def resolve_alphas(run: Run, dev: Cohort, mode: str, scheme=None) -> dict[str, int]:
    """Fixed alpha for both arms, or per-arm alpha tuned by corrected C."""
    cfg = run.cfg
    if cfg.alpha is not None:
        return {ALONE: cfg.alpha, CHEMO: cfg.alpha}
    tuned = tune_alpha(dev, cfg.alpha_grid, mode, cfg.tune_replicates, cfg.seed,
                       scheme or cfg.scheme, cfg.horizon, cfg.fit_config, eval_on=cfg.tune_eval)
    rows = []
    for arm in ARMS:
        t = tuned[arm]
        for a in t.grid:
            rows.append([mode, arm, a, _fmt(t.apparent[a]), _fmt(t.corrected[a]),
                         t.failures[a], int(a == t.best)])
    path = run.path("alpha_tuning.csv")
    new = not path.exists()
    with path.open("a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(["mode", "arm", "alpha", "apparent_c", "corrected_c", "failures",
                        "selected"])
        w.writerows(rows)
    return {arm: tuned[arm].best for arm in ARMS}


def _procedure(cfg: RunConfig, name: str, alphas: dict[str, int], mode: str,
               scheme=None) -> Procedure:
    kw = dict(scheme=scheme or cfg.scheme, horizon=cfg.horizon, fit_config=cfg.fit_config)
    arm = ALONE if name.endswith("A") else CHEMO
    if name == "1":
        return model_1(**kw)
    if name.startswith("2"):
        return model_2(arm, **kw)
    if name.startswith("3"):
        return model_3(arm, mode, alphas[arm], **kw)
    return model_smote(arm, smote=cfg.smote, **kw)


def _emit_balance(run: Run, strat, alpha: int, mode: str, tag: str) -> None:
    """Post-balancing histogram, balanced cohort and match list for one (mode, alpha)."""
    bal = balance_cohort(strat, alpha, mode)
    counts = bal.arm_counts(strat.scheme.S)
    write_histogram(run.path(f"histogram_post_{tag}.csv"), strat.scheme, counts[ALONE],
                    counts[CHEMO])
    union = balanced_union(bal)
    write_cohort(run.path(f"balanced_{tag}.csv"), union, {
        "source_stratum": np.concatenate([bal.source_stratum[ALONE], bal.source_stratum[CHEMO]]),
        "weight": np.concatenate([bal.weights[ALONE], bal.weights[CHEMO]]).astype(int)})
    write_matches(run.path(f"matches_{tag}.csv"), bal)
    log.info("balanced %s: %d + %d patients", tag, bal.alone.n, bal.chemo.n)


def _tail_win(row1, row3, S: int) -> str:
    if row1.stratum not in (0, S - 1) or row1.n_events < MIN_TAIL_EVENTS:
        return ""
    if row1.c is None or row3.c is None:
        return ""
    return "win" if row3.c >= row1.c else "loss"


# -- commands ------------------------------------------------------------------

def cmd_synth(run: Run) -> None:
    cfg = run.cfg
    cohort, truth = generate(_world(cfg).derive(risk_shape=cfg.risk_shape))
    write_cohort(run.path("cohort.csv"), cohort)
    write_truth(run.path("truth.csv"), truth)
    run.lap("generate")
    run.manifest(n=cohort.n, n_events=cohort.n_events)


def cmd_fit(run: Run) -> None:
    cfg = run.cfg
    dev = run.dev()
    alphas = {ALONE: 0, CHEMO: 0}
    if cfg.model.startswith("3"):
        alphas = resolve_alphas(run, dev, cfg.mode)
    proc = _procedure(cfg, cfg.model, alphas, cfg.mode)
    model, train = proc(dev)
    model.save(run.path(_model_file(model.name)))
    report = evaluate_model(model, train, cfg.horizon)
    run.lap("fit")
    run.manifest(model=model.name, arm=model.arm, alpha=alphas,
                 in_sample=report.as_dict(), converged=model.converged)


def cmd_balance(run: Run) -> None:
    cfg = run.cfg
    dev = run.dev()
    strat = stratify(dev, cfg.scheme, cfg.horizon, cfg.fit_config)
    pre = strat.arm_counts()
    write_histogram(run.path("histogram_pre.csv"), cfg.scheme, pre[ALONE], pre[CHEMO])
    alphas = resolve_alphas(run, dev, cfg.mode)
    for a in sorted(set(alphas.values())):
        _emit_balance(run, strat, a, cfg.mode, f"{cfg.mode}_a{a}")
    run.lap("balance")
    run.manifest(alpha=alphas)


INTERNAL_HEADER = ["model", "arm", "mode", "alpha", "n", "n_events",
                   "c_apparent", "c_optimism", "c_corrected", "c_ci_lo", "c_ci_hi",
                   "auc_apparent", "auc_optimism", "auc_corrected", "auc_ci_lo", "auc_ci_hi",
                   "ici_apparent", "ici_optimism", "ici_corrected", "ici_ci_lo", "ici_ci_hi",
                   "replicates", "failures"]


def cmd_experiment(run: Run) -> None:
    """Models 1, 2A, 3A (1-1, relaxed), 2B, 3B (1-1, relaxed) with internal validation."""
    cfg = run.cfg
    dev = run.dev()
    strat = stratify(dev, cfg.scheme, cfg.horizon, cfg.fit_config)
    pre = strat.arm_counts()
    write_histogram(run.path("histogram_pre.csv"), cfg.scheme, pre[ALONE], pre[CHEMO])
    run.lap("stratify")
    alphas = {mode: resolve_alphas(run, dev, mode) for mode in (ONE_TO_ONE, RELAXED)}
    run.lap("alpha")
    for mode in (ONE_TO_ONE, RELAXED):
        for a in sorted(set(alphas[mode].values())):
            _emit_balance(run, strat, a, mode, f"{mode}_a{a}")
    run.lap("balance")
    grid = model_grid(scheme=cfg.scheme, horizon=cfg.horizon, fit_config=cfg.fit_config)
    rows = []
    for proc in grid:
        if proc.balance is not None:
            proc = proc.with_alpha(alphas[proc.balance][proc.arm])
        log.info("validating model %s", proc.name)
        model, _ = proc(dev)
        model.save(run.path("models", _model_file(model.name)))
        rep = bootstrap_validate(proc, dev, cfg.replicates, cfg.horizon, cfg.seed)
        row = [proc.name, proc.arm or "both", proc.balance or "",
               proc.alpha if proc.balance else "", rep.apparent.n, rep.apparent.n_events]
        app = {"c": rep.apparent.harrells_c, "auc": rep.apparent.auc, "ici": rep.apparent.ici}
        for m in ("c", "auc", "ici"):
            ci = rep.ci.get(m) or (None, None)
            row += [_fmt(app[m]), _fmt(rep.optimism[m]), _fmt(rep.corrected[m]),
                    _fmt(ci[0]), _fmt(ci[1])]
        rows.append(row + [rep.replicates, rep.failures])
    _write_rows(run.path("internal_validation.csv"), INTERNAL_HEADER, rows)
    run.lap("validate")
    run.manifest(alpha=alphas, models=[r[0] for r in rows])


def _eval_rows(reports_by_arm):
    """Per-stratum rows with a leading cohort_arm column."""
    for arm, rep in reports_by_arm:
        for r in rep.rows:
            yield [arm, rep.model_name, r.stratum, f"{r.lo:g}", f"{r.hi:g}", r.n, r.n_events,
                   _fmt(r.c), _fmt(r.auc)]


STRATIFIED_HEADER = ["cohort_arm", "model", "stratum", "lo", "hi", "n", "n_events", "C", "AUC"]
OVERALL_HEADER = ["model", "cohort_arm", "n", "n_events", "C", "AUC", "ICI"]


def _targets(model: cox.CoxModel, externals: dict[str, Cohort]) -> list[str]:
    if model.arm is None:
        return [a for a in ARMS if a in externals]
    if model.arm not in externals:
        raise ArmMismatchError(f"model {model.name!r} is tagged {model.arm!r} but no external "
                               f"cohort of that arm was given")
    return [model.arm]


def cmd_validate_external(run: Run) -> None:
    cfg = run.cfg
    if not cfg.models:
        raise ConfigError("validate-external needs `models` (comma list of model JSON files)")
    externals = run.externals()
    overall = []
    for path in cfg.models:
        if not Path(path).is_file():
            raise FileNotFoundError(f"model file not found: {path}")
        model = cox.CoxModel.load(path)
        run.inputs[str(path)] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        arms = _targets(model, externals)
        for S in cfg.strata_set:
            scheme = build_scheme(S, cfg.policy)
            reps = [(a, stratified_external_eval(model, externals[a], scheme=scheme,
                                                 horizon=cfg.horizon)) for a in arms]
            _write_rows(run.path("external", f"stratified_{model.name.replace(' ', '_')}_S{S}.csv"),
                        STRATIFIED_HEADER, _eval_rows(reps))
            if S == cfg.strata_set[0]:
                for a, rep in reps:
                    o = rep.overall
                    overall.append([model.name, a, o.n, o.n_events, _fmt(o.harrells_c),
                                    _fmt(o.auc), _fmt(o.ici)])
    _write_rows(run.path("external_overall.csv"), OVERALL_HEADER, overall)
    run.lap("validate-external")
    run.manifest()


SENSITIVITY_HEADER = ["S", "features", "stratum", "lo", "hi",
                      "n_alone", "events_alone", "c_model1_alone", "c_model3a", "win_alone",
                      "n_chemo", "events_chemo", "c_model1_chemo", "c_model3b", "win_chemo"]


def cmd_sensitivity(run: Run) -> None:
    """S x feature-subset grid of Model 1 vs the balanced Models 3A/3B on external data."""
    cfg = run.cfg
    bad = [S for S in cfg.strata_set if not 7 <= S <= 10]
    if bad:
        raise ConfigError(f"sensitivity needs S in [7, 10], got {bad}")
    dev_all = run.dev()
    externals = run.externals()
    summary = []
    for subset in cfg.feature_subsets:
        dev = _features(cfg, dev_all, subset)
        label = "+".join(subset) if subset else "all"
        for S in cfg.strata_set:
            scheme = build_scheme(S, cfg.policy)
            rdir = f"S{S}_{label}"
            log.info("sensitivity run %s", rdir)
            alphas = resolve_alphas(run, dev, cfg.mode, scheme)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                m1, _ = _procedure(cfg, "1", alphas, cfg.mode, scheme)(dev)
                reps = {}
                for arm, name in ((ALONE, "3A"), (CHEMO, "3B")):
                    m3, _ = _procedure(cfg, name, alphas, cfg.mode, scheme)(dev)
                    m3.save(run.path(rdir, _model_file(m3.name)))
                    if arm in externals:
                        ext = _features(cfg, externals[arm], subset)
                        reps[arm] = (stratified_external_eval(m1, ext, scheme=scheme,
                                                              horizon=cfg.horizon),
                                     stratified_external_eval(m3, ext, scheme=scheme,
                                                              horizon=cfg.horizon))
            m1.save(run.path(rdir, _model_file(m1.name)))
            _write_rows(run.path(rdir, "stratified.csv"), STRATIFIED_HEADER, _eval_rows(
                [(a, r) for a in ARMS if a in reps for r in reps[a]]))
            write_json(run.path(rdir, "alpha.json"), alphas)
            for s in range(S):
                lo, hi = scheme.bounds(s)
                row = [S, label, s, f"{lo:g}", f"{hi:g}"]
                for arm in ARMS:
                    if arm not in reps:
                        row += ["", "", "", "", ""]
                        continue
                    r1, r3 = reps[arm][0].rows[s], reps[arm][1].rows[s]
                    row += [r1.n, r1.n_events, _fmt(r1.c), _fmt(r3.c), _tail_win(r1, r3, S)]
                summary.append(row)
    _write_rows(run.path("sensitivity_summary.csv"), SENSITIVITY_HEADER, summary)
    cells = [r[i] for r in summary for i in (9, 14) if r[i]]
    run.lap("sensitivity")
    run.manifest(tail_cells=len(cells),
                 tail_win_rate=(cells.count("win") / len(cells)) if cells else None)


def cmd_smote_compare(run: Run) -> None:
    """Per-stratum external tables for Model 1, matching-balanced and SMOTE-balanced models."""
    cfg = run.cfg
    dev = run.dev()
    externals = run.externals()
    alphas = resolve_alphas(run, dev, cfg.mode)
    rows, overall = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        m1, _ = _procedure(cfg, "1", alphas, cfg.mode)(dev)
        for arm, (n3, ns) in ((ALONE, ("3A", "SA")), (CHEMO, ("3B", "SB"))):
            if arm not in externals:
                continue
            ext = _features(cfg, externals[arm])
            m_smote, oversampled = _procedure(cfg, ns, alphas, cfg.mode)(dev)
            write_cohort(run.path(f"smote_{arm}.csv"), oversampled,
                         {"synthetic": is_synthetic(oversampled).astype(int)})
            for method, model in (("none", m1),
                                  ("matching", _procedure(cfg, n3, alphas, cfg.mode)(dev)[0]),
                                  ("smote", m_smote)):
                rep = stratified_external_eval(model, ext, scheme=cfg.scheme, horizon=cfg.horizon)
                rows += [[method, *r] for r in _eval_rows([(arm, rep)])]
                o = rep.overall
                overall.append([method, model.name, arm, o.n, o.n_events, _fmt(o.harrells_c),
                                _fmt(o.auc), _fmt(o.ici)])
    _write_rows(run.path("smote_compare.csv"), ["method", *STRATIFIED_HEADER], rows)
    _write_rows(run.path("smote_compare_overall.csv"), ["method", *OVERALL_HEADER], overall)
    run.lap("smote-compare")
    run.manifest(alpha=alphas)


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "balance": cmd_balance,
    "experiment": cmd_experiment,
    "validate-external": cmd_validate_external,
    "sensitivity": cmd_sensitivity,
    "smote-compare": cmd_smote_compare,
}

DATA_ERRORS = (CohortError, ArmMismatchError, FileNotFoundError, DegenerateBinsError)
NUMERIC_ERRORS = (cox.CoxError, ValidationError, ShapeInfeasibleError, np.linalg.LinAlgError,
                  FloatingPointError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskbal", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--strata", help="number of risk strata S")
    p.add_argument("--alpha", help="minimum pairs per stratum, or 'grid' to tune")
    p.add_argument("--mode", help="one-to-one | relaxed")
    p.add_argument("--replicates", help="bootstrap replicates")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    run = None
    try:
        values = read_config_file(args.config) if args.config else {}
        for item in args.set:
            key, sep, val = item.partition("=")
            if not sep or key.strip() not in DEFAULTS:
                raise ConfigError(f"bad --set {item!r}")
            values[key.strip()] = val.strip()
        for key in ("seed", "out", "strata", "alpha", "mode", "replicates"):
            if getattr(args, key) is not None:
                values[key] = getattr(args, key)
        cfg = build_config(values)
        run = Run(args.command, cfg)
        COMMANDS[args.command](run)
        return EXIT_OK
    except (ConfigError, configparser.Error, OSError) as exc:
        code = EXIT_DATA if isinstance(exc, FileNotFoundError) else EXIT_CONFIG
        return _fail(run, code, exc)
    except DATA_ERRORS as exc:
        return _fail(run, EXIT_DATA, exc)
    except NUMERIC_ERRORS as exc:
        return _fail(run, EXIT_NUMERIC, exc)


def _fail(run: Run | None, code: int, exc: BaseException) -> int:
    msg = f"{type(exc).__name__}: {exc}"
    print(f"riskbal: error: {msg}", file=sys.stderr)
    if run is not None:
        run.path("FAILED").write_text(f"exit={code}\n{msg}\n", encoding="utf-8")
        try:
            run.manifest(status="failed", error=msg)
        except Exception:  # the marker is what matters
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
