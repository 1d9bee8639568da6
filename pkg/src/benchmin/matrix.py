"""Performance matrices, rankings, Kendall tau and the cost/accuracy score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from benchmin import kernels


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PerformanceMatrix:
    """Dense variants x tests matrix for one metric.

    Higher values are better: negate lower-is-better metrics (runtime)
    before building the matrix.
    """

    variant_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    values: np.ndarray
    metric_name: str = "perf"

    def __post_init__(self):
        object.__setattr__(self, "variant_ids", tuple(str(v) for v in self.variant_ids))
        object.__setattr__(self, "test_ids", tuple(str(t) for t in self.test_ids))
        values = _readonly(self.values)
        if values.ndim != 2 or values.shape != (len(self.variant_ids), len(self.test_ids)):
            raise ValueError(
                f"matrix {self.metric_name!r}: values shape {values.shape} does not match "
                f"{len(self.variant_ids)} variants x {len(self.test_ids)} tests"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError(f"matrix {self.metric_name!r}: non-finite entries")
        for kind, ids in (("variant", self.variant_ids), ("test", self.test_ids)):
            if len(set(ids)) != len(ids):
                raise ValueError(f"matrix {self.metric_name!r}: duplicate {kind} ids")
        object.__setattr__(self, "values", values)

    @property
    def n_variants(self) -> int:
        return len(self.variant_ids)

    @property
    def n_tests(self) -> int:
        return len(self.test_ids)

    def test_index(self, test_id: str) -> int:
        try:
            return self._test_pos[test_id]
        except KeyError:
            raise KeyError(f"unknown test {test_id!r}") from None

    @cached_property
    def _test_pos(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.test_ids)}

    def take(self, variants: Sequence[int] | None = None, tests: Sequence[int] | None = None):
        v = np.arange(self.n_variants) if variants is None else np.asarray(variants, dtype=int)
        t = np.arange(self.n_tests) if tests is None else np.asarray(tests, dtype=int)
        return PerformanceMatrix(
            tuple(self.variant_ids[i] for i in v),
            tuple(self.test_ids[j] for j in t),
            self.values[np.ix_(v, t)],
            self.metric_name,
        )


@dataclass(frozen=True, eq=False)
class RtsmInstance:
    """One matrix per metric over a shared variant/test layout, plus costs.

    ``costs`` is aligned with ``test_ids``.
    """

    matrices: tuple[PerformanceMatrix, ...]
    costs: np.ndarray
    target_tau: float = 1.0

    def __post_init__(self):
        matrices = tuple(self.matrices)
        if not matrices:
            raise ValueError("instance needs at least one metric matrix")
        first = matrices[0]
        for m in matrices[1:]:
            if m.variant_ids != first.variant_ids:
                raise ValueError(f"metric {m.metric_name!r}: variant ids differ from {first.metric_name!r}")
            if m.test_ids != first.test_ids:
                raise ValueError(f"metric {m.metric_name!r}: test ids differ from {first.metric_name!r}")
        names = [m.metric_name for m in matrices]
        if len(set(names)) != len(names):
            raise ValueError("duplicate metric names")
        if first.n_variants < 2:
            raise ValueError("instance needs at least 2 variants")
        if first.n_tests < 1:
            raise ValueError("instance needs at least 1 test")
        costs = _readonly(np.broadcast_to(np.asarray(self.costs, dtype=np.float64), (first.n_tests,)))
        if not np.all(np.isfinite(costs)) or np.any(costs < 0):
            raise ValueError("test costs must be finite and non-negative")
        if not np.any(costs > 0):
            raise ValueError("at least one test cost must be positive")
        tau = float(self.target_tau)
        if not -1.0 <= tau <= 1.0:
            raise ValueError(f"target_tau {tau} outside [-1, 1]")
        object.__setattr__(self, "matrices", matrices)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "target_tau", tau)

    @property
    def variant_ids(self) -> tuple[str, ...]:
        return self.matrices[0].variant_ids

    @property
    def test_ids(self) -> tuple[str, ...]:
        return self.matrices[0].test_ids

    @property
    def n_variants(self) -> int:
        return self.matrices[0].n_variants

    @property
    def n_tests(self) -> int:
        return self.matrices[0].n_tests

    @property
    def metric_names(self) -> tuple[str, ...]:
        return tuple(m.metric_name for m in self.matrices)

    @property
    def cost_by_test(self) -> dict[str, float]:
        return dict(zip(self.test_ids, self.costs.tolist()))

    def test_index(self, test_id: str) -> int:
        return self.matrices[0].test_index(test_id)

    def indices(self, test_ids) -> tuple[int, ...]:
        return tuple(sorted(self.test_index(t) for t in test_ids))

    def subset_cost(self, tests: Sequence[int]) -> float:
        return math.fsum(self.costs[j] for j in sorted(tests))

    @property
    def total_cost(self) -> float:
        return self.subset_cost(range(self.n_tests))

    def restrict_tests(self, tests: Sequence[int]) -> "RtsmInstance":
        tests = sorted(tests)
        return RtsmInstance(tuple(m.take(tests=tests) for m in self.matrices),
                            self.costs[tests], self.target_tau)

    def restrict_variants(self, variants: Sequence[int]) -> "RtsmInstance":
        variants = sorted(variants)
        return RtsmInstance(tuple(m.take(variants=variants) for m in self.matrices),
                            self.costs, self.target_tau)

    def with_target(self, target_tau: float) -> "RtsmInstance":
        return RtsmInstance(self.matrices, self.costs, target_tau)


@dataclass(frozen=True, eq=False)
class Ranking:
    """Total order over variants; ``ranks[i]`` is variant i's rank, 1 = best."""

    ranks: np.ndarray
    totals: np.ndarray

    @property
    def rank_by_variant(self) -> dict[int, int]:
        return {i: int(r) for i, r in enumerate(self.ranks)}

    @property
    def order(self) -> np.ndarray:
        """Variant indices from rank 1 downwards."""
        return np.argsort(self.ranks, kind="stable")

    def __len__(self):
        return len(self.ranks)


@dataclass
class Solution:
    """A selected test subset with its per-metric regression weights.

    ``tests`` holds column indices in canonical order; ``selected_tests``
    maps them back to ids.
    """

    tests: tuple[int, ...]
    test_ids: tuple[str, ...]
    weights: dict[str, dict[str, float]]
    achieved_tau: float
    total_cost: float
    feasible: bool
    method: str = ""
    seed: int | None = None
    wall_seconds: float = 0.0
    timed_out: bool = False
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def selected_tests(self) -> tuple[str, ...]:
        return tuple(self.test_ids[j] for j in self.tests)

    def __post_init__(self):
        if not self.tests:
            raise ValueError("a solution keeps at least one test")


def ranking_from_totals(totals: np.ndarray) -> Ranking:
    """Rank descending by total; equal totals fall back to ascending index."""
    totals = np.asarray(totals, dtype=np.float64)
    order = np.argsort(-totals, kind="stable")
    ranks = np.empty(len(totals), dtype=np.int_)
    ranks[order] = np.arange(1, len(totals) + 1)
    return Ranking(ranks, totals)


def full_ranking(matrix: PerformanceMatrix) -> Ranking:
    n = matrix.n_tests
    return ranking_from_totals(kernels.ordered_totals(matrix.values, np.arange(n), np.ones(n)))


def weighted_ranking(matrix: PerformanceMatrix, selected: Sequence[str],
                     weights: Mapping[str, float]) -> Ranking:
    """Rank by ``sum(weights[t] * values[:, t])`` over ``selected``.

    Columns are summed in the matrix's canonical test order regardless of
    the order of ``selected``.
    """
    cols = sorted(matrix.test_index(t) for t in selected)
    try:
        w = [float(weights[matrix.test_ids[c]]) for c in cols]
    except KeyError as exc:
        raise KeyError(f"no weight for test {exc.args[0]!r}") from None
    return ranking_from_totals(kernels.ordered_totals(matrix.values, cols, w))


def pair_counts(a: Ranking, b: Ranking) -> tuple[int, int]:
    """(discordant, total) pair counts between two rankings."""
    if len(a) != len(b):
        raise ValueError(f"rankings over different variant sets ({len(a)} vs {len(b)})")
    n = len(a)
    return kernels.discordant_pairs(a.ranks, b.ranks), n * (n - 1) // 2


def kendall_fraction(a: Ranking, b: Ranking) -> Fraction:
    """Kendall tau as an exact rational."""
    d, p = pair_counts(a, b)
    if p == 0:
        return Fraction(1)
    return Fraction(p - 2 * d, p)


def kendall_tau(a: Ranking, b: Ranking) -> float:
    """(concordant - discordant) / pairs. No tie correction: rankings are total orders."""
    return float(kendall_fraction(a, b))


def score(cost_reduction: float, tau: float) -> float:
    """Cost/accuracy trade-off in [0, 1]; keeping everything at tau=1 scores 0.5."""
    if not 0.0 <= cost_reduction <= 1.0:
        raise ValueError(f"cost_reduction {cost_reduction} outside [0, 1]")
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau {tau} outside [-1, 1]")
    return (2.0 * cost_reduction + (1.0 + tau)) / 4.0


def cost_reduction(instance: RtsmInstance, solution: Solution) -> float:
    idx = solution.tests
    if any(j < 0 or j >= instance.n_tests for j in idx):
        raise ValueError("solution references tests outside the instance")
    kept = instance.subset_cost(idx)
    return min(1.0, max(0.0, 1.0 - kept / instance.total_cost))
