"""Bisection sampling: necessary-test detection plus recursive random halving."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from benchmin.matrix import RtsmInstance, Solution
from benchmin.oracle import FeasibilityOracle

Subset = tuple[int, ...]


class BudgetExhausted(Exception):
    """Raised inside a search when the deadline passes; callers return best-so-far."""


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based generator for the stream ``key`` under ``seed``.

    Streams with different keys are independent, so sub-searches draw the
    same numbers whatever order they run in.
    """
    ss = np.random.SeedSequence(int(seed) & ((1 << 64) - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SearchBudget:
    """Wall-clock deadline (``time.monotonic`` instant, or None) and seed."""

    deadline: float | None = None
    rng_seed: int = 0
    max_merge_retries: int = 3

    def __post_init__(self):
        if self.deadline is not None and self.deadline <= time.monotonic():
            raise ValueError("deadline must lie in the future")
        if self.max_merge_retries < 1:
            raise ValueError("max_merge_retries must be positive")

    @classmethod
    def after(cls, seconds: float | None, rng_seed: int = 0, max_merge_retries: int = 3) -> "SearchBudget":
        deadline = None if seconds is None else time.monotonic() + seconds
        return cls(deadline, rng_seed, max_merge_retries)

    def expired(self) -> bool:
        return self.deadline is not None and time.monotonic() >= self.deadline

    def check(self):
        if self.expired():
            raise BudgetExhausted


@dataclass(frozen=True)
class Partition:
    necessary: Subset
    removable: Subset
    partial: bool = False


class Incumbent:
    """Best verified subset so far; cost only ever goes down."""

    def __init__(self, instance: RtsmInstance, subset: Iterable[int]):
        self.instance = instance
        self.subset: Subset = tuple(sorted(subset))
        self.key = self._key(self.subset)
        self.history: list[tuple[float, float]] = [(time.monotonic(), self.key[0])]

    def _key(self, subset: Subset):
        ids = self.instance.test_ids
        return self.instance.subset_cost(subset), sorted(ids[j] for j in subset)

    def offer(self, subset: Iterable[int]) -> bool:
        subset = tuple(sorted(subset))
        key = self._key(subset)
        if key < self.key:
            self.subset, self.key = subset, key
            if key[0] < self.history[-1][1]:
                self.history.append((time.monotonic(), key[0]))
            return True
        return False

    @property
    def cost(self) -> float:
        return self.key[0]


def better(instance: RtsmInstance, a: Subset, b: Subset) -> Subset:
    """Lower cost wins; equal costs fall back to the smaller sorted id list."""
    ids = instance.test_ids
    ka = (instance.subset_cost(a), sorted(ids[j] for j in a))
    kb = (instance.subset_cost(b), sorted(ids[j] for j in b))
    return a if ka <= kb else b


def split_half(tests: Iterable[int], rng: np.random.Generator) -> tuple[Subset, Subset]:
    """Uniform random split into A (floor half) and B (the rest)."""
    items = sorted(tests)
    pick = rng.permutation(len(items))[: len(items) // 2]
    chosen = set(items[i] for i in pick)
    return tuple(t for t in items if t in chosen), tuple(t for t in items if t not in chosen)


def _union(a: Iterable[int], b: Iterable[int]) -> Subset:
    return tuple(sorted(set(a) | set(b)))


def _find_necessary(oracle: FeasibilityOracle, context: Subset, removable: Subset,
                    necessary: Subset, budget: SearchBudget) -> Partition:
    necessary_set = set(necessary)
    working = _union(removable, necessary)
    kept = []
    for i, t in enumerate(removable):
        if budget.expired():
            return Partition(tuple(sorted(necessary_set)), tuple(kept) + tuple(removable[i:]), True)
        candidate = tuple(x for x in working if x != t)
        if oracle.feasible(context, candidate):
            kept.append(t)
        else:
            necessary_set.add(t)
    return Partition(tuple(sorted(necessary_set)), tuple(kept))


def find_necessary(removable: Iterable[int], necessary: Iterable[int], context: Iterable[int],
                   instance: RtsmInstance, budget: SearchBudget, *,
                   oracle: FeasibilityOracle | None = None) -> Partition:
    """Move every test whose single removal breaks feasibility into ``necessary``.

    Tests are visited in canonical (column) order. If the budget runs out the
    partition computed so far comes back with ``partial=True``.
    """
    removable = tuple(sorted(removable))
    necessary = tuple(sorted(necessary))
    context = tuple(sorted(context))
    if set(removable) & set(necessary):
        raise ValueError("removable and necessary tests overlap")
    if not set(removable) | set(necessary) <= set(context):
        raise ValueError("tests outside the context")
    oracle = oracle or FeasibilityOracle(instance)
    return _find_necessary(oracle, context, removable, necessary, budget)


class _Bisection:
    def __init__(self, oracle: FeasibilityOracle, context: Subset, budget: SearchBudget,
                 rng: np.random.Generator, incumbent: Incumbent, max_depth: int):
        self.oracle = oracle
        self.context = context
        self.budget = budget
        self.rng = rng
        self.incumbent = incumbent
        self.max_depth = max_depth

    def run(self, removable: Subset, necessary: Subset, depth: int) -> Subset:
        part = _find_necessary(self.oracle, self.context, removable, necessary, self.budget)
        if part.partial:
            raise BudgetExhausted
        removable, necessary = part.removable, part.necessary
        if not removable:
            return necessary
        if depth > self.max_depth:
            return _union(removable, necessary)
        a, b = split_half(removable, self.rng)
        self.budget.check()
        with_a = _union(a, necessary)
        if self.oracle.feasible(self.context, with_a):
            self.incumbent.offer(with_a)
            return self.run(a, necessary, depth + 1)
        self.budget.check()
        with_b = _union(b, necessary)
        if self.oracle.feasible(self.context, with_b):
            self.incumbent.offer(with_b)
            return self.run(b, necessary, depth + 1)
        # neither half suffices alone: assume one of them is needed, try both
        s_a = self.run(b, with_a, depth + 1)
        self.incumbent.offer(s_a)
        s_b = self.run(a, with_b, depth + 1)
        self.incumbent.offer(s_b)
        return better(self.oracle.instance, s_a, s_b)


def bisect_subset(oracle: FeasibilityOracle, removable: Subset, necessary: Subset, context: Subset,
                  budget: SearchBudget, rng: np.random.Generator,
                  incumbent: Incumbent | None = None) -> tuple[Subset, bool]:
    """Index-level bisection sampling. Returns ``(subset, timed_out)``.

    ``necessary | removable`` must already be feasible for ``context``.
    """
    start = _union(removable, necessary)
    incumbent = incumbent or Incumbent(oracle.instance, start)
    max_depth = math.ceil(math.log2(max(len(removable), 1))) + 8
    search = _Bisection(oracle, context, budget, rng, incumbent, max_depth)
    try:
        found = search.run(tuple(sorted(removable)), tuple(sorted(necessary)), 0)
    except BudgetExhausted:
        return incumbent.subset, True
    incumbent.offer(found)
    return incumbent.subset, False


def bisection_sample(removable: Iterable[int], necessary: Iterable[int], context: Iterable[int],
                     instance: RtsmInstance, budget: SearchBudget, *,
                     rng: np.random.Generator | None = None,
                     oracle: FeasibilityOracle | None = None) -> Solution:
    """Sample a low-cost feasible subset of ``necessary | removable`` for ``context``.

    Anytime: on deadline the best subset verified so far is returned (at
    worst the whole input set).
    """
    started = time.monotonic()
    context = tuple(sorted(context))
    removable = tuple(sorted(removable))
    necessary = tuple(sorted(necessary))
    if not set(removable) | set(necessary) <= set(context):
        raise ValueError("tests outside the context")
    oracle = oracle or FeasibilityOracle(instance)
    rng = rng if rng is not None else rng_stream(budget.rng_seed)
    incumbent = Incumbent(instance, _union(removable, necessary))
    subset, timed_out = bisect_subset(oracle, removable, necessary, context, budget, rng, incumbent)
    sol = oracle.solution(context, subset, method="biss", seed=budget.rng_seed, timed_out=timed_out)
    if not sol.feasible:
        # defensive: never hand back an unverified subset
        sol = oracle.solution(context, _union(removable, necessary), method="biss",
                              seed=budget.rng_seed, timed_out=timed_out)
    sol.wall_seconds = time.monotonic() - started
    sol.extra["history"] = incumbent.history
    return sol
