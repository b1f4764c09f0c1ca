"""Acceptance criteria 1-8, each at its stated tolerance.

Every test prints one ``acceptance N: PASS|FAIL`` line; the terminal summary
repeats all eight.
"""

import csv
import filecmp
import time
import warnings

import numpy as np
import pytest

from riskbal import cox
from riskbal.cli import main
from riskbal.cohort import ALONE, CHEMO
from riskbal.experiments import run_phenomenon
from riskbal.matching import MatchingProblem, balance_cohort, brute_force_match, solve_one_to_one
from riskbal.metrics import harrells_c, ici_at
from riskbal.procedures import model_1
from riskbal.stratify import build_scheme, stratify
from riskbal.synth import MID_HEAVY, SynthSpec, generate, true_risks
from riskbal.validation import bootstrap_validate

from conftest import make_cohort
from oracles import concordance_pairs


def test_1_matching_optimality(acceptance):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for i in range(1000):
        n_a, n_b, K = rng.integers(1, 8), rng.integers(1, 8), rng.integers(1, 5)
        a, b = rng.normal(size=(n_a, K)), rng.normal(size=(n_b, K))
        if i % 4 == 0:  # ties
            a, b = a.round(0), b.round(0)
        p = MatchingProblem.build(a, b, [f"a{j}" for j in range(n_a)],
                                  [f"b{j}" for j in range(n_b)], int(rng.integers(1, 10)))
        mismatches += solve_one_to_one(p).objective != brute_force_match(p).objective
    c, _ = generate(SynthSpec(risk_shape=MID_HEAVY, seed=7))
    strat = stratify(c, build_scheme(8))
    t0 = time.perf_counter()
    bal = balance_cohort(strat, 30)
    wall = time.perf_counter() - t0
    ok = mismatches == 0 and wall < 5.0
    acceptance(1, ok, f"{mismatches}/1000 objective mismatches; 8-stratum balance of "
                      f"{c.n} patients in {wall:.3f}s (solver {bal.solve_seconds:.3f}s, bound 5s)")


def test_2_cox_correctness(acceptance):
    rng = np.random.default_rng(7)
    c = make_cohort(rng.standard_normal((100, 4)), rng.exponential(10, 100),
                    rng.random(100) < 0.7)
    h, worst = 1e-5, 0.0
    for _ in range(10):
        b = rng.normal(0, 0.5, 4)
        _, g = cox.nlpl_and_gradient(c, b)
        fd = np.array([(cox.nlpl_and_gradient(c, b + h * e)[0]
                        - cox.nlpl_and_gradient(c, b - h * e)[0]) / (2 * h) for e in np.eye(4)])
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))

    covered = 0
    for s in range(100):
        r = np.random.default_rng(10_000 + s)
        x = np.repeat([0.0, 1.0], 200)
        t = r.exponential(1.0 / np.where(x == 1, 2.0, 1.0))
        m = cox.fit(make_cohort(x, t, np.ones(400, dtype=bool)))
        covered += abs(m.beta[0] - np.log(2)) < 3 * m.std_errors[0]

    drift = 0.0
    for s in range(20):
        r = np.random.default_rng(20_000 + s)
        X = r.standard_normal((80, 3))
        t = r.integers(1, 20, 80).astype(float)
        base = make_cohort(X, t, r.random(80) < 0.7)
        b0 = cox.fit(base).beta
        for f in (np.log1p, np.sqrt, lambda u: u ** 3, lambda u: 5 * u + 1):
            drift = max(drift, np.abs(cox.fit(base.replace(time=f(t))).beta - b0).max())
    ok = worst < 1e-6 and covered >= 95 and drift <= 1e-10
    acceptance(2, ok, f"(a) max gradient rel. error {worst:.2e}; (b) {covered}/100 within "
                      f"3 SE of ln 2; (c) max beta change {drift:.1e} under monotone maps")


def test_3_harrells_c(acceptance):
    rng = np.random.default_rng(3)
    mism = 0
    sizes = np.r_[rng.integers(2, 501, 190), [500] * 10]
    for n in sizes:
        r = rng.integers(0, 30, n) if n % 3 == 0 else rng.normal(size=n)  # some tied risks
        t = rng.integers(1, 60, n).astype(float)
        e = rng.random(n) < 0.6
        e[0] = True
        t[0] = 0.5  # guarantees comparable pairs
        mism += harrells_c(r, t, e) != concordance_pairs(r, t, e)
    t, e = [2.0, 5.0, 8.0], [1, 1, 0]
    cases = (harrells_c([0.9, 0.5, 0.1], t, e), harrells_c([0.3] * 3, t, e),
             harrells_c([0.1, 0.5, 0.9], t, e))
    ok = mism == 0 and cases == (1.0, 0.5, 0.0)
    acceptance(3, ok, f"{mism}/200 oracle mismatches (n up to 500); perfect/tied/reversed = "
                      f"{cases}")


def test_4_ici(acceptance):
    spec = SynthSpec(n_alone=5000, n_chemo=1, seed=0, administrative_months=200)
    c, _ = generate(spec)
    a = c.with_arm(ALONE)
    r = true_risks(spec, a.X)
    calibrated = ici_at(r, a.time, a.event, 60)
    shifted = ici_at(np.clip(r + 0.2, 0, 1), a.time, a.event, 60)
    ok = calibrated < 0.03 and 0.15 <= shifted <= 0.25
    acceptance(4, ok, f"calibrated ICI {calibrated:.4f} (< 0.03); shifted ICI {shifted:.4f} "
                      f"(in [0.15, 0.25])")


def test_5_optimism_bootstrap(acceptance):
    rng = np.random.default_rng(5)
    n = 400
    X = rng.standard_normal((n, 3))
    c = make_cohort(X, rng.exponential(20 * np.exp(-X @ [0.5, 0.3, 0.2])), rng.random(n) < 0.7)
    fixed = cox.CoxModel(c.schema, np.array([0.5, 0.3, 0.2]), np.zeros(3), np.array([1.0]),
                         np.array([0.1]), 0, 0.0, True)
    flat = bootstrap_validate(lambda d: (fixed, d), c, replicates=200, seed=5, metrics=("c",))
    positive, ordered = 0, 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(50):
            r = np.random.default_rng(s)
            noise = make_cohort(r.standard_normal((60, 10)), r.exponential(30, 60),
                                r.random(60) < 0.7)
            rep = bootstrap_validate(model_1(), noise, replicates=100, seed=s, metrics=("c",))
            if rep.optimism["c"] > 0:
                positive += 1
                ordered += rep.corrected["c"] <= rep.apparent.harrells_c
    ok = abs(flat.optimism["c"]) < 0.01 and positive >= 45 and ordered == positive
    acceptance(5, ok, f"data-independent |optimism| {abs(flat.optimism['c']):.4f} (< 0.01); "
                      f"overfit optimism > 0 in {positive}/50, corrected <= apparent in "
                      f"{ordered}/{positive}")


@pytest.mark.slow
def test_6_phenomenon(acceptance):
    summary = run_phenomenon(range(20))
    ok = summary.passed(0.6, 0.03)
    acceptance(6, ok, f"tail win rate {summary.tail_win_rate:.3f} over {summary.tail_cells} "
                      f"cells (>= 0.6); mean mid-strata C change {summary.mean_mid_delta:+.4f} "
                      f"(> -0.03)")


@pytest.fixture(scope="module")
def experiment_runs(tmp_path_factory):
    # identical configuration, output directory included (the manifest echoes it)
    base = tmp_path_factory.mktemp("experiment")
    out = base / "out"
    outs = []
    for k in range(2):
        assert main(["experiment", "--out", str(out), "--seed", "11", "--replicates", "50"]) == 0
        outs.append(out.rename(base / f"run{k}"))
    return outs


def _arm_counts(path):
    counts = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = int(r["source_stratum"])
            counts.setdefault(key, {ALONE: 0, CHEMO: 0})[r["arm"]] += 1
    return counts


def test_7_balance_structure(acceptance, experiment_runs):
    checked, unequal = 0, []
    for out in experiment_runs:
        files = sorted(out.glob("balanced_one-to-one_a*.csv"))
        assert files
        for f in files:
            for s, cnt in _arm_counts(f).items():
                checked += 1
                if cnt[ALONE] != cnt[CHEMO]:
                    unequal.append((f.name, s, cnt))
    ok = checked > 0 and not unequal
    acceptance(7, ok, f"{checked} (file, stratum) recounts from emitted balanced CSVs, "
                      f"{len(unequal)} with unequal arm counts")


def _tree_diff(a, b):
    cmp = filecmp.dircmp(a, b)
    diffs = cmp.left_only + cmp.right_only
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    diffs += mismatch + errors
    for sub in cmp.common_dirs:
        diffs += [f"{sub}/{d}" for d in _tree_diff(a / sub, b / sub)]
    return diffs


def test_8_determinism(acceptance, experiment_runs):
    a, b = experiment_runs
    n_files = sum(1 for p in a.rglob("*") if p.is_file())
    diffs = _tree_diff(a, b)
    ok = not diffs and n_files > 0
    acceptance(8, ok, f"two `experiment` runs with seed 11: {n_files} files, "
                      f"{len(diffs)} differing {diffs[:3]}")
