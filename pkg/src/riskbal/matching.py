"""Within-stratum minimum-distance matching between treatment arms.

Each stratum is a k-cardinality assignment problem: choose exactly
``c = min(alpha, |A|, |B|)`` disjoint pairs (a, b) minimising the summed
Euclidean distance of standardized covariates. With nonnegative costs,
requiring at least ``alpha`` pairs is the same as requiring exactly ``c``.

:func:`solve_one_to_one` solves it as a min-cost flow
source -> A -> B -> sink with unit capacities, by successive shortest
augmenting paths (Dijkstra on reduced costs). Every intermediate flow of
value f is a min-cost flow of value f, so stopping after ``c`` augmentations
is exact up to floating-point rounding. A final pass removes that caveat:
any matching cheaper in exact arithmetic differs from the float optimum by a
cycle of near-zero reduced-cost residual edges, and those few cycles are
checked with rational arithmetic.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from .cohort import ALONE, CHEMO, Cohort, CohortError, concat
from .stratify import StratifiedCohort

ONE_TO_ONE = "one-to-one"
RELAXED = "relaxed"
MODES = (ONE_TO_ONE, RELAXED)

BRUTE_FORCE_LIMIT = 7


class EmptyBalancedCohortError(CohortError):
    pass


@dataclass(frozen=True)
class Standardization:
    means: np.ndarray
    sds: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardization":
        X = np.asarray(X, dtype=float)
        return cls(X.mean(axis=0), X.std(axis=0))  # population sd

    def transform(self, X) -> np.ndarray:
        scale = np.where(self.sds > 0, self.sds, 1.0)
        return (np.asarray(X, dtype=float) - self.means) / scale


def standardize(cohort: Cohort) -> Standardization:
    """Means and population sds over every patient of ``cohort`` (both arms)."""
    if cohort.has_missing:
        raise ValueError("impute before standardizing")
    return Standardization.fit(cohort.X)


@dataclass(frozen=True, eq=False)
class MatchingProblem:
    group_a: np.ndarray
    group_b: np.ndarray
    a_ids: tuple
    b_ids: tuple
    alpha: int
    distances: np.ndarray
    swapped: bool = False

    @classmethod
    def build(cls, xa, xb, a_ids, b_ids, alpha: int) -> "MatchingProblem":
        """Problem over standardized rows; relabels so that ``|A| <= |B|``."""
        if alpha < 1:
            raise ValueError("alpha must be >= 1")
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        a_ids, b_ids = tuple(a_ids), tuple(b_ids)
        if len(a_ids) != len(xa) or len(b_ids) != len(xb):
            raise ValueError("ids and feature rows differ in length")
        swapped = len(xa) > len(xb)
        if swapped:
            xa, xb, a_ids, b_ids = xb, xa, b_ids, a_ids
        if len(xa) and len(xb):
            d = cdist(xa, xb)
        else:
            d = np.zeros((len(xa), len(xb)))
        return cls(xa, xb, a_ids, b_ids, int(alpha), d, swapped)

    @property
    def target(self) -> int:
        return min(self.alpha, len(self.a_ids), len(self.b_ids))


@dataclass(frozen=True)
class MatchingResult:
    pairs: tuple[tuple[str, str], ...]
    objective: float
    cardinality: int
    mode: str = ONE_TO_ONE
    distances: tuple[float, ...] = ()
    b_multiplicity: dict = field(default_factory=dict)


def _result(problem: MatchingProblem, rows, cols, mode: str) -> MatchingResult:
    order = sorted(zip(rows, cols), key=lambda rc: (problem.a_ids[rc[0]], problem.b_ids[rc[1]]))
    d = tuple(float(problem.distances[i, j]) for i, j in order)
    pairs = tuple((problem.a_ids[i], problem.b_ids[j]) for i, j in order)
    mult = {}
    if mode == RELAXED:
        for a, _ in pairs:
            mult[a] = mult.get(a, 0) + 1
    return MatchingResult(pairs, math.fsum(d), len(pairs), mode, d, mult)


def _empty_guard(problem: MatchingProblem, mode: str) -> MatchingResult | None:
    if len(problem.a_ids) == 0:
        if len(problem.b_ids) == 0:
            raise ValueError("matching problem needs |B| >= 1")
        warnings.warn("group A is empty; stratum contributes no pairs", stacklevel=3)
        return MatchingResult((), 0.0, 0, mode)
    return None


def solve_one_to_one(problem: MatchingProblem) -> MatchingResult:
    """Exact minimum-distance matching of cardinality ``min(alpha, |A|, |B|)``.

    Dual convention: row potentials ``u``, column potentials ``v``, reduced
    cost ``d - u - v >= 0``. All free rows are Dijkstra sources at distance
    zero; they always share the same potential because they are updated
    together and never return to the free set.
    """
    empty = _empty_guard(problem, ONE_TO_ONE)
    if empty is not None:
        return empty
    cost = problem.distances
    n_a, n_b = cost.shape
    u = np.zeros(n_a)
    v = np.zeros(n_b)
    col4row = np.full(n_a, -1)
    row4col = np.full(n_b, -1)
    cols = np.arange(n_b)
    for _ in range(problem.target):
        free_rows = np.flatnonzero(col4row < 0)
        reduced = cost[free_rows] - u[free_rows, None] - v[None, :]
        best = np.argmin(reduced, axis=0)  # lowest index on ties
        shortest = reduced[best, cols]  # tentative labels; inf once a column is final
        path = free_rows[best]
        final = np.zeros(n_b)
        is_done = np.zeros(n_b, dtype=bool)
        done = []
        seen = []
        while True:
            j = int(np.argmin(shortest))
            lowest = shortest[j]
            final[j] = lowest
            shortest[j] = np.inf
            is_done[j] = True
            done.append(j)
            i = row4col[j]
            if i < 0:
                sink = j
                break
            seen.append((i, lowest))
            r = lowest + cost[i] - u[i] - v
            better = (r < shortest) & ~is_done
            shortest[better] = r[better]
            path[better] = i
        u[free_rows] += lowest
        for i, dist in seen:
            u[i] += lowest - dist
        done = np.array(done)
        v[done] -= lowest - final[done]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if j < 0:
                break
    _polish_exact(cost, u, v, col4row, row4col)
    rows = np.flatnonzero(col4row >= 0)
    return _result(problem, rows, col4row[rows], ONE_TO_ONE)


def _tight_residual(cost, u, v, col4row, row4col, tol):
    """Residual edges with reduced cost <= tol as (tail, head, exact cost) lists.

    Nodes: rows ``0..n_a-1``, columns ``n_a..n_a+n_b-1``, source, sink.
    Source and sink potentials are those of a free row and a free column.
    """
    n_a, n_b = cost.shape
    src, snk = n_a + n_b, n_a + n_b + 1
    rc = cost - u[:, None] - v[None, :]
    matched = np.zeros_like(rc, dtype=bool)
    mrows = np.flatnonzero(col4row >= 0)
    matched[mrows, col4row[mrows]] = True
    free_rows = np.flatnonzero(col4row < 0)
    free_cols = np.flatnonzero(row4col < 0)
    u_free = u[free_rows].max() if len(free_rows) else u.max()
    v_free = v[free_cols].min() if len(free_cols) else v.min()
    tails, heads, costs = [], [], []

    def add(t, h, c):
        tails.extend(t.tolist())
        heads.extend(h.tolist())
        costs.extend(c)

    fi, fj = np.nonzero((rc <= tol) & ~matched)
    add(fi, n_a + fj, [Fraction(float(x)) for x in cost[fi, fj]])
    add(n_a + col4row[mrows], mrows, [-Fraction(float(x)) for x in cost[mrows, col4row[mrows]]])
    add(np.full(len(free_rows), src), free_rows, [0] * len(free_rows))
    back = mrows[u_free - u[mrows] <= tol]
    add(back, np.full(len(back), src), [0] * len(back))
    add(n_a + free_cols, np.full(len(free_cols), snk), [0] * len(free_cols))
    mcols = np.flatnonzero(row4col >= 0)
    back = mcols[v[mcols] >= v_free - tol]
    add(np.full(len(back), snk), n_a + back, [0] * len(back))
    return tails, heads, costs


def _negative_cycle(nodes, edges):
    """Exact Bellman-Ford from a virtual source; a negative cycle as edge indices, or None."""
    dist = {x: Fraction(0) for x in nodes}
    pred = {x: None for x in nodes}
    last = None
    for _ in range(len(nodes)):
        last = None
        for k, (t, h, c) in enumerate(edges):
            if dist[t] + c < dist[h]:
                dist[h] = dist[t] + c
                pred[h] = k
                last = h
        if last is None:
            return None
    x = last
    for _ in range(len(nodes)):
        x = edges[pred[x]][0]
    cycle, y = [], x
    while True:
        k = pred[y]
        cycle.append(k)
        y = edges[k][0]
        if y == x:
            return cycle[::-1]


def _polish_exact(cost, u, v, col4row, row4col) -> None:
    """Cancel residual cycles that are negative in exact arithmetic (in place).

    With potentials from the float solver every residual edge has reduced
    cost above -delta (rounding), so an exactly negative cycle can only use
    edges with reduced cost below its length times delta. Only strongly
    connected pieces of that tight subgraph are searched.
    """
    n_a, n_b = cost.shape
    scale = 1.0 + float(np.abs(cost).max(initial=0.0)) + float(np.abs(u).max(initial=0.0)) \
        + float(np.abs(v).max(initial=0.0))
    tol = 1e-9 * scale
    n_nodes = n_a + n_b + 2
    while True:
        tails, heads, costs = _tight_residual(cost, u, v, col4row, row4col, tol)
        g = coo_matrix((np.ones(len(tails)), (tails, heads)), shape=(n_nodes, n_nodes))
        n_comp, label = connected_components(g, directed=True, connection="strong")
        sizes = np.bincount(label, minlength=n_comp)
        cycle = None
        for comp in np.flatnonzero(sizes > 1):
            nodes = np.flatnonzero(label == comp).tolist()
            inside = [k for k in range(len(tails))
                      if label[tails[k]] == comp and label[heads[k]] == comp]
            edges = [(tails[k], heads[k], costs[k]) for k in inside]
            found = _negative_cycle(nodes, edges)
            if found is not None:
                cycle = [edges[k] for k in found]
                break
        if cycle is None:
            return
        pairs = {(i, int(col4row[i])) for i in np.flatnonzero(col4row >= 0)}
        for t, h, _ in cycle:
            if t < n_a and n_a <= h < n_a + n_b:  # row -> column enters the matching
                pairs.add((t, h - n_a))
            elif n_a <= t < n_a + n_b and h < n_a:  # column -> row leaves it
                pairs.discard((h, t - n_a))
        col4row[:] = -1
        row4col[:] = -1
        for i, j in pairs:
            col4row[i], row4col[j] = j, i


def solve_relaxed(problem: MatchingProblem) -> MatchingResult:
    """Matching in which patients of the smaller group may be reused.

    Every patient of the larger group is paired with its nearest patient of
    the smaller group, and the ``min(alpha, larger size)`` pairs with the
    smallest distances are kept. Both arms therefore reach ``alpha`` whenever
    the larger one can. ``b_multiplicity`` counts how often each reused
    (smaller-group) patient appears.
    """
    empty = _empty_guard(problem, RELAXED)
    if empty is not None:
        return empty
    d = problem.distances
    nn = np.argmin(d, axis=0)  # lowest index on ties
    nn_d = d[nn, np.arange(d.shape[1])]
    c = min(problem.alpha, len(problem.b_ids))
    keep = sorted(range(len(nn)), key=lambda j: (nn_d[j], problem.b_ids[j]))[:c]
    return _result(problem, [nn[j] for j in keep], keep, RELAXED)


@lru_cache(maxsize=64)
def _injections(n_b: int, c: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n_b), c)), dtype=int).reshape(-1, c)


def brute_force_match(problem: MatchingProblem) -> MatchingResult:
    """Exhaustive enumeration of every c-subset of A and injection into B."""
    n_a, n_b = problem.distances.shape
    if n_a > BRUTE_FORCE_LIMIT or n_b > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_LIMIT}x{BRUTE_FORCE_LIMIT}, "
                         f"got {n_a}x{n_b}")
    empty = _empty_guard(problem, ONE_TO_ONE)
    if empty is not None:
        return empty
    c = problem.target
    inj = _injections(n_b, c)
    best_key, best = None, None
    for subset in itertools.combinations(range(n_a), c):
        sub = problem.distances[list(subset)]
        totals = sub[np.arange(c), inj].sum(axis=1)
        near = np.flatnonzero(totals <= totals.min() + 1e-9)
        for k in near:
            cols = inj[k]
            exact = math.fsum(sub[np.arange(c), cols])
            pairs = sorted((problem.a_ids[i], problem.b_ids[j]) for i, j in zip(subset, cols))
            key = (exact, pairs)
            if best_key is None or key < best_key:
                best_key, best = key, (list(subset), cols.tolist())
    return _result(problem, best[0], best[1], ONE_TO_ONE)


SOLVERS = {ONE_TO_ONE: solve_one_to_one, RELAXED: solve_relaxed}


# -- cohort balancing -----------------------------------------------------------

@dataclass(frozen=True)
class StratumMatch:
    stratum: int
    result: MatchingResult
    a_arm: str


@dataclass(frozen=True, eq=False)
class BalancedCohort:
    alone: Cohort
    chemo: Cohort
    source_stratum: dict[str, np.ndarray]
    weights: dict[str, np.ndarray]
    stratum_pairs: np.ndarray
    matches: tuple[StratumMatch, ...]
    mode: str
    alpha: int
    solve_seconds: float

    def arm(self, arm: str) -> Cohort:
        return self.alone if arm == ALONE else self.chemo

    def arm_counts(self, S: int) -> dict[str, np.ndarray]:
        return {a: np.bincount(self.source_stratum[a], minlength=S) for a in (ALONE, CHEMO)}


def _dup_ids(ids) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for i in ids:
        k = seen.get(i, 0) + 1
        seen[i] = k
        out.append(i if k == 1 else f"{i}#{k}")
    return out


def balance_cohort(stratified: StratifiedCohort, alpha: int, mode: str = ONE_TO_ONE,
                   standardization: Standardization | None = None) -> BalancedCohort:
    """Match arms inside every stratum and gather the matched records per arm."""
    if mode not in SOLVERS:
        raise ValueError(f"unknown matching mode {mode!r}")
    cohort = stratified.cohort
    std = standardization or standardize(cohort)
    Z = std.transform(cohort.X)
    ids = cohort.ids
    pos = {str(k): i for i, k in enumerate(ids)}
    solver = SOLVERS[mode]
    S = stratified.scheme.S
    picked = {ALONE: [], CHEMO: []}
    strata = {ALONE: [], CHEMO: []}
    pair_counts = np.zeros(S, dtype=int)
    matches = []
    t0 = time.perf_counter()
    for s in range(S):
        in_s = stratified.stratum_index == s
        ia = np.flatnonzero(in_s & (cohort.arm == ALONE))
        ic = np.flatnonzero(in_s & (cohort.arm == CHEMO))
        if len(ia) == 0 or len(ic) == 0:
            continue
        problem = MatchingProblem.build(Z[ia], Z[ic], ids[ia].tolist(), ids[ic].tolist(), alpha)
        result = solver(problem)
        a_arm = CHEMO if problem.swapped else ALONE
        b_arm = ALONE if a_arm == CHEMO else CHEMO
        matches.append(StratumMatch(s, result, a_arm))
        pair_counts[s] = result.cardinality
        for a_id, b_id in result.pairs:
            picked[a_arm].append(pos[a_id])
            picked[b_arm].append(pos[b_id])
            strata[a_arm].append(s)
            strata[b_arm].append(s)
    elapsed = time.perf_counter() - t0
    if not picked[ALONE] or not picked[CHEMO]:
        raise EmptyBalancedCohortError("no stratum holds patients from both arms")
    arms = {}
    for arm in (ALONE, CHEMO):
        idx = np.array(picked[arm], dtype=int)
        new_ids = _dup_ids([str(ids[i]) for i in idx])
        arms[arm] = cohort.take(idx, ids=new_ids, provenance=f"balanced[{mode},alpha={alpha}]")
    return BalancedCohort(arms[ALONE], arms[CHEMO],
                          {a: np.array(strata[a], dtype=int) for a in arms},
                          {a: np.ones(arms[a].n) for a in arms},
                          pair_counts, tuple(matches), mode, alpha, elapsed)


def balanced_union(balanced: BalancedCohort) -> Cohort:
    return concat([balanced.alone, balanced.chemo], provenance=balanced.alone.provenance)


def write_matches(path: str | Path, balanced: BalancedCohort) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stratum", "a_id", "b_id", "distance"])
        for m in balanced.matches:
            for (a, b), d in zip(m.result.pairs, m.result.distances):
                w.writerow([m.stratum, a, b, format(d, ".17g")])
