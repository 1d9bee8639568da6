"""Divide-and-conquer driver and iterative restarts around a sampling routine."""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from benchmin.baselines import exact_minimize, greedy_shrink, pca_shrink, random_shrink, removal_priority
from benchmin.biss import (BudgetExhausted, Incumbent, SearchBudget, Subset, _union, bisect_subset,
                           rng_stream)
from benchmin.matrix import RtsmInstance, Solution
from benchmin.oracle import FeasibilityOracle

log = logging.getLogger(__name__)

SAMPLERS = ("biss", "random", "greedy", "pca")
METHODS = SAMPLERS + ("exact",)
AUTO_CHUNK = 64

# draw-purpose tags for rng_stream keys
_SPLIT, _CHUNK, _MERGE = 0, 1, 2


@dataclass(frozen=True)
class SubInstance:
    """A solution together with the tests it is known to be valid for."""

    solution_tests: Subset
    context_tests: Subset

    @classmethod
    def checked(cls, oracle: FeasibilityOracle, solution: Subset, context: Subset) -> "SubInstance":
        if not set(solution) <= set(context) or not oracle.feasible(context, solution):
            raise RuntimeError("sub-solution is not valid for its context")
        return cls(tuple(solution), tuple(context))


@dataclass
class SolverConfig:
    n_splits: int | str = "auto"
    sampler: str = "biss"
    max_merge_retries: int = 3
    budget: SearchBudget = field(default_factory=SearchBudget)
    ridge: float = 0.0
    clamp_negative: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if self.n_splits != "auto" and (not isinstance(self.n_splits, int) or self.n_splits < 1):
            raise ValueError("n_splits must be a positive integer or 'auto'")
        if self.max_merge_retries < 1:
            raise ValueError("max_merge_retries must be positive")

    def splits_for(self, n_tests: int) -> int:
        if self.n_splits == "auto":
            return max(1, math.ceil(n_tests / AUTO_CHUNK))
        return min(self.n_splits, n_tests)


def split(tests: Sequence[int], n: int, rng: np.random.Generator) -> list[Subset]:
    """Random partition into ``n`` chunks whose sizes differ by at most one."""
    tests = sorted(tests)
    if not 1 <= n <= len(tests):
        raise ValueError(f"cannot split {len(tests)} tests into {n} chunks")
    perm = [tests[i] for i in rng.permutation(len(tests))]
    size, extra = divmod(len(tests), n)
    chunks, pos = [], 0
    for i in range(n):
        step = size + (1 if i < extra else 0)
        chunks.append(tuple(sorted(perm[pos:pos + step])))
        pos += step
    return chunks


class _Sampler:
    """Uniform entry point: ``(removable, necessary, context, rng) -> (subset, timed_out)``."""

    def __init__(self, name: str, oracle: FeasibilityOracle, budget: SearchBudget):
        self.name = name
        self.oracle = oracle
        self.budget = budget
        self.deterministic = name in ("greedy", "pca")
        self._priority = removal_priority(oracle.instance) if name == "greedy" else None

    def __call__(self, removable: Subset, necessary: Subset, context: Subset,
                 rng: np.random.Generator) -> tuple[Subset, bool]:
        inc = Incumbent(self.oracle.instance, _union(removable, necessary))
        if self.name == "biss":
            return bisect_subset(self.oracle, removable, necessary, context, self.budget, rng, inc)
        try:
            if self.name == "random":
                found = random_shrink(self.oracle, removable, necessary, context, self.budget, rng, inc)
            elif self.name == "greedy":
                found = greedy_shrink(self.oracle, removable, necessary, context, self.budget,
                                      priority=self._priority, incumbent=inc)
            else:
                found = pca_shrink(self.oracle, removable, necessary, context, self.budget, incumbent=inc)
        except BudgetExhausted:
            return inc.subset, True
        inc.offer(found)
        return inc.subset, False


def _dc_pass(oracle: FeasibilityOracle, pool: Subset, scope: Subset, config: SolverConfig,
             sample: _Sampler, pass_index: int) -> tuple[Subset, bool, dict]:
    """One divide-and-conquer pass over the candidate tests ``pool``.

    Chunk contexts are chunks of ``pool``; the final answer must be valid for
    ``scope`` (the original tests), which ``pool`` itself is known to be.
    """
    budget = config.budget
    seed = budget.rng_seed
    n = config.splits_for(len(pool))
    stats = {"chunks": n, "merges": 0, "merge_fallbacks": 0}
    if n == 1:
        rng = rng_stream(seed) if pass_index == 0 else rng_stream(seed, pass_index)
        subset, timed_out = sample(pool, (), scope, rng)
        SubInstance.checked(oracle, subset, scope)
        return subset, timed_out, stats

    timed_out = False
    queue: deque[SubInstance] = deque()
    for i, chunk in enumerate(split(pool, n, rng_stream(seed, pass_index, _SPLIT))):
        if budget.expired():
            timed_out = True
            queue.append(SubInstance(chunk, chunk))
            continue
        subset, hit = sample(chunk, (), chunk, rng_stream(seed, pass_index, _CHUNK, i))
        timed_out |= hit
        queue.append(SubInstance.checked(oracle, subset, chunk))

    merge_no = 0
    attempts = 1 if sample.deterministic else config.max_merge_retries
    while len(queue) > 1:
        a, b = queue.popleft(), queue.popleft()
        context = scope if not queue else _union(a.context_tests, b.context_tests)
        both = _union(a.solution_tests, b.solution_tests)
        merged = None
        for attempt in range(attempts):
            if budget.expired():
                timed_out = True
                break
            cand, hit = sample(both, (), both, rng_stream(seed, pass_index, _MERGE, merge_no, attempt))
            timed_out |= hit
            if oracle.feasible(context, cand):
                merged = cand
                break
        if merged is None:
            # keep both sub-solutions; if even that is not valid, keep the whole context
            stats["merge_fallbacks"] += 1
            merged = both if oracle.feasible(context, both) else (pool if context == scope else context)
        queue.append(SubInstance.checked(oracle, merged, context))
        merge_no += 1
    stats["merges"] = merge_no
    return queue[0].solution_tests, timed_out, stats


def _oracle_for(instance: RtsmInstance, config: SolverConfig) -> FeasibilityOracle:
    return FeasibilityOracle(instance, ridge=config.ridge, clamp_negative=config.clamp_negative)


def divide_and_conquer(instance: RtsmInstance, config: SolverConfig, *,
                       oracle: FeasibilityOracle | None = None) -> Solution:
    """One pass: split the tests, sample each chunk, merge pairwise in FIFO order.

    Every merge is re-checked against the union of the two chunks' contexts,
    and the last merge against the whole instance; after ``max_merge_retries``
    failed samples the two sub-solutions are kept as they are (or the whole
    context if even that fails).
    """
    started = time.monotonic()
    oracle = oracle or _oracle_for(instance, config)
    tests = tuple(range(instance.n_tests))
    sample = _Sampler(config.sampler, oracle, config.budget)
    subset, timed_out, stats = _dc_pass(oracle, tests, tests, config, sample, 0)
    sol = oracle.solution(tests, subset, method=config.sampler, seed=config.budget.rng_seed,
                          timed_out=timed_out, iterations=1)
    sol.wall_seconds = time.monotonic() - started
    sol.extra.update(stats)
    return sol


def iterative_solve(instance: RtsmInstance, config: SolverConfig, *,
                    oracle: FeasibilityOracle | None = None) -> Solution:
    """Repeat divide-and-conquer on the previous answer while the cost strictly drops.

    Pass k draws candidates from the tests kept by pass k-1; its chunks are
    solved against those tests alone, but the merged answer of every pass
    is checked against the original instance.
    """
    started = time.monotonic()
    oracle = oracle or _oracle_for(instance, config)
    all_tests = tuple(range(instance.n_tests))
    sample = _Sampler(config.sampler, oracle, config.budget)
    incumbent = Incumbent(instance, all_tests)
    iterations = 0
    timed_out = False
    while True:
        if config.budget.expired():
            timed_out = True
            break
        current = incumbent.subset
        subset, hit, _ = _dc_pass(oracle, current, all_tests, config, sample, iterations)
        iterations += 1
        timed_out |= hit
        improved = instance.subset_cost(subset) < incumbent.cost
        if improved:
            incumbent.offer(subset)
        log.debug("pass %d: %d -> %d tests%s", iterations, len(current), len(subset),
                  "" if improved else " (stop)")
        if not improved or hit:
            break
    sol = oracle.solution(all_tests, incumbent.subset, method=config.sampler,
                          seed=config.budget.rng_seed, timed_out=timed_out, iterations=iterations)
    sol.wall_seconds = time.monotonic() - started
    sol.extra["history"] = incumbent.history
    return sol


def minimize(instance: RtsmInstance, method: str = "biss", *, seed: int = 0,
             n_splits: int | str = "auto", deadline_seconds: float | None = None,
             max_merge_retries: int = 3, iterative: bool = True, **fit_options) -> Solution:
    """Run one method end to end; ``exact`` is standalone, the others use DC + restarts."""
    budget = SearchBudget.after(deadline_seconds, seed, max_merge_retries)
    if method == "exact":
        sol = exact_minimize(instance, budget=budget)
        sol.seed = seed
        return sol
    config = SolverConfig(n_splits, method, max_merge_retries, budget, **fit_options)
    run: Callable = iterative_solve if iterative else divide_and_conquer
    return run(instance, config)
