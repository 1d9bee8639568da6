"""Comparison methods: random shrinking, variance-greedy, PCA-guided removal,
and an exact solver for the unit-weight, tau = 1 formulation.

The first three work on index subsets inside a context and can serve as the
sampling step of the divide-and-conquer driver. ``exact_minimize`` is
standalone.
"""

from __future__ import annotations

import re
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from benchmin import kernels
from benchmin.biss import BudgetExhausted, Incumbent, SearchBudget, Subset, _union, rng_stream
from benchmin.matrix import RtsmInstance, Solution, full_ranking, kendall_fraction, ranking_from_totals
from benchmin.oracle import FeasibilityOracle

EXHAUSTIVE_LIMIT = 20
BRANCH_AND_BOUND_LIMIT = 60
NODE_LIMIT = 50_000


# -- randomized shrinking ----------------------------------------------------

def random_shrink(oracle: FeasibilityOracle, removable: Subset, necessary: Subset, context: Subset,
                  budget: SearchBudget, rng: np.random.Generator,
                  incumbent: Incumbent | None = None) -> Subset:
    """Drop one random test at a time while the remainder stays feasible."""
    current = list(sorted(removable))
    while current:
        for pos in rng.permutation(len(current)):
            budget.check()
            t = current[pos]
            candidate = _union((x for x in current if x != t), necessary)
            if oracle.feasible(context, candidate):
                current.remove(t)
                if incumbent is not None:
                    incumbent.offer(candidate)
                break
        else:
            break
    return _union(current, necessary)


def random_search_step(current: Iterable[int], instance: RtsmInstance, rng: np.random.Generator,
                       budget: SearchBudget, *, oracle: FeasibilityOracle | None = None) -> Solution:
    """Iteratively shrink ``current`` by sampling feasible subsets one test smaller."""
    started = time.monotonic()
    oracle = oracle or FeasibilityOracle(instance)
    context = tuple(range(instance.n_tests))
    current = tuple(sorted(current))
    incumbent = Incumbent(instance, current)
    timed_out = False
    try:
        random_shrink(oracle, current, (), context, budget, rng, incumbent)
    except BudgetExhausted:
        timed_out = True
    sol = oracle.solution(context, incumbent.subset, method="random", seed=budget.rng_seed,
                          timed_out=timed_out)
    sol.wall_seconds = time.monotonic() - started
    return sol


# -- variance greedy ------------------------------------------------------------

def removal_priority(instance: RtsmInstance, statistic: str = "variance", aggregate: str = "min") -> np.ndarray:
    """Per-test score; lower means the test is tried for removal earlier.

    Each metric's statistic is divided by its mean over all tests so that
    metrics in different units can be combined with ``aggregate``.
    """
    rows = []
    for m in instance.matrices:
        if statistic == "variance":
            s = m.values.var(axis=0)
        elif statistic == "mean":
            s = np.abs(m.values.mean(axis=0))
        else:
            raise ValueError(f"unknown greedy statistic {statistic!r}")
        scale = s.mean()
        rows.append(s / scale if scale > 0 else s)
    rows = np.vstack(rows)
    if aggregate == "min":
        return rows.min(axis=0)
    if aggregate == "mean":
        return rows.mean(axis=0)
    raise ValueError(f"unknown greedy aggregate {aggregate!r}")


def greedy_shrink(oracle: FeasibilityOracle, removable: Subset, necessary: Subset, context: Subset,
                  budget: SearchBudget, *, priority: np.ndarray | None = None,
                  incumbent: Incumbent | None = None) -> Subset:
    if priority is None:
        priority = removal_priority(oracle.instance)
    order = sorted(removable, key=lambda t: (priority[t], t))
    current = set(removable)
    changed = True
    while changed:
        changed = False
        for t in order:
            if t not in current:
                continue
            budget.check()
            candidate = _union(current - {t}, necessary)
            if oracle.feasible(context, candidate):
                current.discard(t)
                changed = True
                if incumbent is not None:
                    incumbent.offer(candidate)
    return _union(current, necessary)


def greedy_minimize(instance: RtsmInstance, budget: SearchBudget, *, statistic: str = "variance",
                    aggregate: str = "min", oracle: FeasibilityOracle | None = None) -> Solution:
    """Remove tests in ascending order of variance whenever the rest stays feasible.

    Deterministic: no random numbers are drawn.
    """
    started = time.monotonic()
    oracle = oracle or FeasibilityOracle(instance)
    context = tuple(range(instance.n_tests))
    incumbent = Incumbent(instance, context)
    timed_out = False
    try:
        greedy_shrink(oracle, context, (), context, budget,
                      priority=removal_priority(instance, statistic, aggregate), incumbent=incumbent)
    except BudgetExhausted:
        timed_out = True
    sol = oracle.solution(context, incumbent.subset, method="greedy", seed=None, timed_out=timed_out)
    sol.wall_seconds = time.monotonic() - started
    return sol


# -- PCA -------------------------------------------------------------------------

def pca_loadings(instance: RtsmInstance, cols: Sequence[int]) -> np.ndarray | None:
    """Absolute loading of each column on the first principal direction.

    Columns are centered; each metric block is scaled by its overall RMS so
    metrics with different units are comparable while relative column
    magnitudes inside a metric are kept. A test's loading is its largest
    over metrics. Returns None when the centered matrix is all zero.
    """
    cols = list(cols)
    blocks = []
    for m in instance.matrices:
        x = m.values[:, cols]
        x = x - x.mean(axis=0)
        rms = np.sqrt(np.mean(x * x))
        blocks.append(x / rms if rms > 0 else x)
    x = np.hstack(blocks)
    if not np.any(x):
        return None
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    load = np.abs(vt[0]).reshape(len(instance.matrices), len(cols))
    return load.max(axis=0)


def pca_shrink(oracle: FeasibilityOracle, removable: Subset, necessary: Subset, context: Subset,
               budget: SearchBudget, *, incumbent: Incumbent | None = None) -> Subset:
    instance = oracle.instance
    fallback = removal_priority(instance)
    current = list(sorted(removable))
    while current:
        working = _union(current, necessary)
        load = pca_loadings(instance, working)
        if load is None:
            key = {t: fallback[t] for t in current}
        else:
            pos = {t: i for i, t in enumerate(working)}
            key = {t: load[pos[t]] for t in current}
        removed = False
        for t in sorted(current, key=lambda t: (key[t], t)):
            budget.check()
            candidate = _union((x for x in current if x != t), necessary)
            if oracle.feasible(context, candidate):
                current.remove(t)
                removed = True
                if incumbent is not None:
                    incumbent.offer(candidate)
                break
        if not removed:
            break
    return _union(current, necessary)


def pca_minimize(instance: RtsmInstance, budget: SearchBudget, *,
                 oracle: FeasibilityOracle | None = None) -> Solution:
    """Repeatedly drop the feasible-to-remove test with the smallest first-component loading."""
    started = time.monotonic()
    oracle = oracle or FeasibilityOracle(instance)
    context = tuple(range(instance.n_tests))
    incumbent = Incumbent(instance, context)
    timed_out = False
    try:
        pca_shrink(oracle, context, (), context, budget, incumbent=incumbent)
    except BudgetExhausted:
        timed_out = True
    sol = oracle.solution(context, incumbent.subset, method="pca", seed=None, timed_out=timed_out)
    sol.wall_seconds = time.monotonic() - started
    return sol


# -- exact unit-weight solver -------------------------------------------------

@dataclass(frozen=True)
class PairConstraint:
    """``sense`` in {">=", "<="} on ``sum_i u_i * coeffs[i]`` against 0.

    ``strict`` marks pairs where equal sums would resolve the tie the wrong
    way (the better variant has the larger index).
    """

    metric: str
    better: int
    worse: int
    coeffs: np.ndarray
    sense: str
    strict: bool


@dataclass(frozen=True)
class ExactModel:
    """Binary selection model: one u_i per test, minimize sum u_i * cost_i."""

    n_tests: int
    costs: np.ndarray
    constraints: tuple[PairConstraint, ...]

    @classmethod
    def build(cls, instance: RtsmInstance) -> "ExactModel":
        cons = []
        for m in instance.matrices:
            order = full_ranking(m).order
            for i, k in enumerate(order):
                for l in order[i + 1:]:
                    d = m.values[k] - m.values[l]
                    strict = bool(k > l)
                    cons.append(PairConstraint(m.metric_name, int(k), int(l), d, ">=", strict))
                    cons.append(PairConstraint(m.metric_name, int(l), int(k), -d, "<=", strict))
        return cls(instance.n_tests, instance.costs, tuple(cons))

    def to_lp(self, margin: float = 1e-9) -> str:
        """CPLEX LP text. Strict constraints get ``margin`` on the right-hand side."""
        def term(c, j):
            return f"{'-' if c < 0 else '+'} {abs(float(c))!r} u_{j}"

        lines = ["\\ benchmin unit-weight ranking-preservation model", "Minimize",
                 " obj: " + " ".join(term(c, j) for j, c in enumerate(self.costs)), "Subject To"]
        for n, con in enumerate(self.constraints):
            rhs = margin if con.strict else 0.0
            if con.sense == "<=":
                rhs = -rhs
            body = " ".join(term(c, j) for j, c in enumerate(con.coeffs) if c != 0) or "0 u_0"
            lines.append(f" c{n}: {body} {con.sense} {rhs!r}")
        lines.append(" nonempty: " + " ".join(f"+ u_{j}" for j in range(self.n_tests)) + " >= 1")
        lines.append("Binary")
        lines.append(" " + " ".join(f"u_{j}" for j in range(self.n_tests)))
        lines.append("End")
        return "\n".join(lines) + "\n"


_VAR = re.compile(r"^u_(\d+)$")


def read_solution_file(text: str) -> set[int]:
    """Selected tests from a solver solution file.

    Any line containing a token ``u_<j>`` followed (anywhere later on the
    line) by a number >= 0.5 marks test j as selected. Covers CBC's
    ``solu`` output and the plain ``u_3 1`` format.
    """
    chosen = set()
    for line in text.splitlines():
        toks = line.split()
        for i, tok in enumerate(toks):
            m = _VAR.match(tok)
            if not m:
                continue
            for later in toks[i + 1:]:
                try:
                    val = float(later)
                except ValueError:
                    continue
                if val >= 0.5:
                    chosen.add(int(m.group(1)))
                break
    return chosen


@dataclass
class ExternalBackend:
    """Run an external integer-programming solver through files.

    ``command`` is a shell-style template with ``{problem}`` and
    ``{solution}`` placeholders, e.g. ``"cbc {problem} solve solu {solution}"``.
    """

    command: str
    margin: float = 1e-9
    timeout: float | None = None

    def solve(self, model: ExactModel) -> set[int]:
        with tempfile.TemporaryDirectory(prefix="benchmin-ip-") as tmp:
            problem = Path(tmp) / "model.lp"
            solution = Path(tmp) / "model.sol"
            problem.write_text(model.to_lp(self.margin), encoding="utf-8")
            argv = [a.format(problem=problem, solution=solution) for a in shlex.split(self.command)]
            subprocess.run(argv, check=True, timeout=self.timeout, capture_output=True)
            return read_solution_file(solution.read_text(encoding="utf-8"))


class _PairTable:
    """Adjacent-pair constraints of the reference rankings, one row per pair."""

    def __init__(self, instance: RtsmInstance):
        better, worse, diffs, mats = [], [], [], []
        for k, m in enumerate(instance.matrices):
            order = full_ranking(m).order
            for a, b in zip(order[:-1], order[1:]):
                better.append(int(a))
                worse.append(int(b))
                mats.append(k)
                diffs.append(m.values[a] - m.values[b])
        self.better = np.array(better)
        self.worse = np.array(worse)
        self.metric = np.array(mats)
        self.tie_ok = self.better < self.worse
        self.diffs = np.array(diffs)

    def satisfied(self, sums: np.ndarray) -> np.ndarray:
        """``sums[..., metric, variant]`` -> boolean per pair (last axis)."""
        hi = sums[..., self.metric, self.better]
        lo = sums[..., self.metric, self.worse]
        return (hi > lo) | ((hi == lo) & self.tie_ok)


def _exhaustive(instance: RtsmInstance) -> Subset:
    t = instance.n_tests
    vals = np.stack([m.values for m in instance.matrices])  # metric x variant x test
    pairs = _PairTable(instance)
    low = min(t, 14)
    nl = 1 << low
    low_sums = np.zeros((nl,) + vals.shape[:2])
    low_cost = np.zeros(nl)
    for mask in range(1, nl):
        hb = mask.bit_length() - 1
        low_sums[mask] = low_sums[mask ^ (1 << hb)] + vals[:, :, hb]
        low_cost[mask] = low_cost[mask ^ (1 << hb)] + instance.costs[hb]
    best_cost = np.inf
    candidates = []
    for high in range(1 << (t - low)):
        sums = low_sums
        cost = low_cost
        for j in range(low, t):
            if high >> (j - low) & 1:
                sums = sums + vals[:, :, j]
                cost = cost + instance.costs[j]
        ok = pairs.satisfied(sums).all(axis=-1)
        if high == 0:
            ok[0] = False
        if not ok.any():
            continue
        c = cost[ok]
        cmin = c.min()
        if cmin <= best_cost * (1 + 1e-12):
            masks = np.flatnonzero(ok)[c <= cmin * (1 + 1e-12) + 1e-300]
            candidates.extend((high << low) | int(m) for m in masks)
            best_cost = min(best_cost, cmin)
    subsets = [tuple(j for j in range(t) if mask >> j & 1) for mask in candidates]
    ids = instance.test_ids
    return min(subsets, key=lambda s: (instance.subset_cost(s), sorted(ids[j] for j in s)))


def _duplicate_groups(vals: np.ndarray, costs: np.ndarray) -> list[int]:
    """Per test, the index of the first test with an identical column and cost."""
    first: dict[bytes, int] = {}
    return [first.setdefault(vals[:, :, j].tobytes() + costs[j].tobytes(), j) for j in range(len(costs))]


def _unit_sums(vals: np.ndarray, cols: Sequence[int]) -> np.ndarray:
    ones = np.ones(len(cols))
    return np.stack([kernels.ordered_totals(v, cols, ones) for v in vals])


def _greedy_unit_subset(vals: np.ndarray, costs: np.ndarray, pairs: _PairTable) -> list[int]:
    chosen = list(range(len(costs)))
    for j in sorted(chosen, key=lambda j: (-costs[j], -j)):
        rest = [k for k in chosen if k != j]
        if rest and pairs.satisfied(_unit_sums(vals, rest)).all():
            chosen = rest
    return chosen


def _cover_cost(gain: np.ndarray, cost: np.ndarray, need: float) -> float:
    """Least cost of reaching ``need`` from items taken fractionally (a lower bound)."""
    useful = gain > 0
    gain, cost = gain[useful], cost[useful]
    if gain.sum() < need:
        return np.inf
    free = cost <= 0
    if gain[free].sum() >= need:
        return 0.0
    order = np.argsort(-gain / np.where(free, 1.0, cost), kind="stable")
    total = spent = 0.0
    for k in order:
        if total + gain[k] >= need:
            return spent + cost[k] * (need - total) / gain[k]
        total += gain[k]
        spent += cost[k]
    return np.inf


def _branch_and_bound(instance: RtsmInstance, budget: SearchBudget | None,
                      max_nodes: int = NODE_LIMIT) -> tuple[Subset, bool]:
    """Depth-first include/exclude search; returns (best subset, stopped early).

    ``max_nodes`` caps the search deterministically; the wall-clock budget
    is checked as well.
    """
    t = instance.n_tests
    vals = np.stack([m.values for m in instance.matrices])
    pairs = _PairTable(instance)
    costs = instance.costs
    group = _duplicate_groups(vals, costs)
    # strongest columns first so that exclusions are pruned early
    strength = np.clip(pairs.diffs, 0, None).sum(axis=0) / np.where(costs > 0, costs, 1.0)
    order = sorted(range(t), key=lambda j: (-strength[j], j))
    gains = pairs.diffs[:, order]
    ocost = costs[order]
    reach = np.zeros((len(pairs.better), t + 1))
    reach[:, :t] = np.cumsum(np.clip(gains, 0, None)[:, ::-1], axis=1)[:, ::-1]
    slack = 1e-9 * (np.abs(pairs.diffs).sum(axis=1) + 1.0)
    start = _greedy_unit_subset(vals, costs, pairs)
    best = [tuple(start), instance.subset_cost(start)]

    def bound(ok: np.ndarray, margin: np.ndarray, i: int) -> float:
        open_pairs = np.flatnonzero(~ok)
        if np.any(reach[open_pairs, i] + slack[open_pairs] < -margin[open_pairs]):
            return np.inf
        need = 0.0
        for p in open_pairs:
            need = max(need, _cover_cost(gains[p, i:], ocost[i:], max(-margin[p] - slack[p], 0.0)))
        return need

    def accept(chosen: list[int], cost: float):
        subset = tuple(sorted(chosen))
        if cost < best[1] and pairs.satisfied(_unit_sums(vals, subset)).all():
            best[0], best[1] = subset, cost

    visited = [0]

    def dfs(i: int, chosen: list[int], sums: np.ndarray, cost: float, banned: frozenset):
        visited[0] += 1
        if visited[0] > max_nodes:
            raise BudgetExhausted
        if budget is not None:
            budget.check()
        ok = pairs.satisfied(sums) if chosen else np.zeros(len(pairs.better), dtype=bool)
        if chosen and ok.all():
            accept(chosen, cost)
            return
        margin = sums[pairs.metric, pairs.better] - sums[pairs.metric, pairs.worse]
        if i == t or cost + bound(ok, margin, i) >= best[1]:
            return
        j = order[i]
        # identical columns only differ by how many copies are taken: take a prefix of each group
        if group[j] not in banned:
            chosen.append(j)
            dfs(i + 1, chosen, sums + vals[:, :, j], cost + costs[j], banned)
            chosen.pop()
        dfs(i + 1, chosen, sums, cost, banned | {group[j]})

    timed_out = False
    try:
        dfs(0, [], np.zeros(vals.shape[:2]), 0.0, frozenset())
    except BudgetExhausted:
        timed_out = True
    return best[0], timed_out


def exact_minimize(instance: RtsmInstance, *, backend: str = "auto",
                   external: ExternalBackend | None = None,
                   budget: SearchBudget | None = None, max_nodes: int = NODE_LIMIT) -> Solution:
    """Minimum-cost subset that reproduces every metric's ranking with unit weights.

    Backends: ``exhaustive`` (up to 20 tests), ``bnb`` branch and bound (up
    to 60 tests), ``external`` (any solver behind :class:`ExternalBackend`);
    ``auto`` picks the first applicable of exhaustive and bnb. A branch and
    bound that visits ``max_nodes`` nodes or runs out of ``budget`` returns
    its best subset so far with ``timed_out`` set; that subset is feasible
    but not proven optimal.
    """
    if instance.target_tau < 1.0:
        raise ValueError("exact backend supports tau = 1 only")
    started = time.monotonic()
    t = instance.n_tests
    timed_out = False
    if backend == "auto":
        backend = "exhaustive" if t <= EXHAUSTIVE_LIMIT else "bnb"
    if backend == "exhaustive":
        if t > EXHAUSTIVE_LIMIT:
            raise ValueError(f"exhaustive backend is limited to {EXHAUSTIVE_LIMIT} tests (got {t})")
        subset = _exhaustive(instance)
    elif backend == "bnb":
        if t > BRANCH_AND_BOUND_LIMIT:
            raise ValueError(f"branch-and-bound backend is limited to {BRANCH_AND_BOUND_LIMIT} tests (got {t})")
        subset, timed_out = _branch_and_bound(instance, budget, max_nodes)
    elif backend == "external":
        if external is None:
            raise ValueError("external backend requested without a solver command")
        subset = tuple(sorted(external.solve(ExactModel.build(instance))))
        if not subset:
            raise ValueError("external solver selected no tests")
    else:
        raise ValueError(f"unknown exact backend {backend!r}")
    sol = unit_weight_solution(instance, subset)
    if backend == "external" and not sol.feasible:
        raise ValueError("external solver returned a subset that does not preserve the ranking")
    sol.timed_out = timed_out
    sol.wall_seconds = time.monotonic() - started
    return sol


def unit_weight_solution(instance: RtsmInstance, subset: Sequence[int], method: str = "exact") -> Solution:
    subset = tuple(sorted(subset))
    ids = instance.test_ids
    worst = None
    for m in instance.matrices:
        pred = kernels.ordered_totals(m.values, subset, np.ones(len(subset)))
        tau = kendall_fraction(ranking_from_totals(pred), full_ranking(m))
        worst = tau if worst is None else min(worst, tau)
    return Solution(
        tests=subset,
        test_ids=ids,
        weights={m.metric_name: {ids[j]: 1.0 for j in subset} for m in instance.matrices},
        achieved_tau=float(worst),
        total_cost=instance.subset_cost(subset),
        feasible=worst >= 1,
        method=method,
    )
