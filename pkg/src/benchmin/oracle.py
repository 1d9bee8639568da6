"""Regression-based feasibility check for candidate test subsets.

A subset is feasible for a context (the set of tests playing the role of
"the whole benchmark") when, for every metric, least-squares weights on the
subset columns predict the context row totals well enough that the predicted
ranking reaches the target Kendall tau.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from benchmin import kernels
from benchmin.matrix import (PerformanceMatrix, Ranking, RtsmInstance, Solution,
                             kendall_fraction, ranking_from_totals)

_MEMO_LIMIT = 500_000
# relative gap under which a fitted prediction counts as an exact reconstruction
EXACT_FIT_RTOL = 1e-9


@dataclass
class OracleResult:
    feasible: bool
    per_metric_tau: dict[str, float]
    weights: dict[str, dict[str, float]]
    fit_residual: dict[str, float]
    worst_tau: Fraction

    @property
    def achieved_tau(self) -> float:
        return float(self.worst_tau)


def _fit_columns(values: np.ndarray, cols: Sequence[int], target: np.ndarray,
                 ridge: float = 0.0, clamp_negative: bool = False):
    a = values[:, cols]
    if ridge > 0.0:
        k = a.shape[1]
        a_fit = np.vstack([a, np.sqrt(ridge) * np.eye(k)])
        y_fit = np.concatenate([target, np.zeros(k)])
    else:
        a_fit, y_fit = a, target
    # SVD-based solver: minimum-norm solution when rank deficient
    w = np.linalg.lstsq(a_fit, y_fit, rcond=None)[0]
    if clamp_negative:
        w = np.where(w < 0.0, 0.0, w)
    pred = kernels.ordered_totals(values, cols, w)
    resid = pred - target
    return w, pred, float(resid @ resid)


def predicted_tau(totals: np.ndarray, reference: Ranking, pred: np.ndarray) -> Fraction:
    """Kendall tau between predicted totals and the reference ranking.

    A prediction within ``EXACT_FIT_RTOL`` of the true totals counts as an
    exact reconstruction, so rounding noise cannot reorder tied variants.
    """
    scale = float(np.max(np.abs(totals)))
    if np.max(np.abs(pred - totals)) <= EXACT_FIT_RTOL * max(scale, 1e-300):
        return Fraction(1)
    return kendall_fraction(ranking_from_totals(pred), reference)


def _row_totals(values: np.ndarray, cols: Sequence[int]) -> np.ndarray:
    return kernels.ordered_totals(values, cols, np.ones(len(cols)))


def fit_weights(matrix: PerformanceMatrix, subset: Iterable[str], *, ridge: float = 0.0,
                clamp_negative: bool = False) -> tuple[dict[str, float], float]:
    """Least-squares weights predicting each variant's full total from ``subset``.

    Returns ``(weights, residual)`` where residual is the attained sum of
    squared errors. Rank-deficient systems get the minimum-norm solution.
    """
    cols = sorted({matrix.test_index(t) for t in subset})
    if not cols:
        raise ValueError("cannot fit weights on an empty test subset")
    target = _row_totals(matrix.values, range(matrix.n_tests))
    w, _, resid = _fit_columns(matrix.values, cols, target, ridge, clamp_negative)
    return {matrix.test_ids[c]: float(x) for c, x in zip(cols, w)}, resid


class FeasibilityOracle:
    """Memoizing feasibility checker bound to one instance.

    Contexts and subsets are sorted tuples of column indices. Results are
    cached per (context, subset); the oracle is deterministic so the cache
    never changes an answer.
    """

    def __init__(self, instance: RtsmInstance, *, ridge: float = 0.0, clamp_negative: bool = False):
        self.instance = instance
        self.ridge = ridge
        self.clamp_negative = clamp_negative
        self.target = Fraction(instance.target_tau)
        self._contexts: dict[tuple[int, ...], list[tuple[np.ndarray, Ranking]]] = {}
        self._memo: dict[tuple[tuple[int, ...], tuple[int, ...]], bool] = {}
        self.n_fits = 0

    @property
    def all_tests(self) -> tuple[int, ...]:
        return tuple(range(self.instance.n_tests))

    def _context(self, context: tuple[int, ...]):
        got = self._contexts.get(context)
        if got is None:
            got = []
            for m in self.instance.matrices:
                y = _row_totals(m.values, context)
                got.append((y, ranking_from_totals(y)))
            if len(self._contexts) > 4096:
                self._contexts.clear()
            self._contexts[context] = got
        return got

    def _metric_tau(self, k: int, context, subset) -> tuple[Fraction, np.ndarray, float]:
        values = self.instance.matrices[k].values
        y, reference = self._context(context)[k]
        if subset == context:
            return Fraction(1), np.ones(len(subset)), 0.0
        self.n_fits += 1
        w, pred, resid = _fit_columns(values, subset, y, self.ridge, self.clamp_negative)
        return predicted_tau(y, reference, pred), w, resid

    def feasible(self, context: Sequence[int], subset: Sequence[int]) -> bool:
        context = tuple(context)
        subset = tuple(subset)
        if not subset:
            return False
        key = (context, subset)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        ok = True
        if subset != context:
            for k in range(len(self.instance.matrices)):
                if self._metric_tau(k, context, subset)[0] < self.target:
                    ok = False
                    break
        if len(self._memo) > _MEMO_LIMIT:
            self._memo.clear()
        self._memo[key] = ok
        return ok

    def evaluate(self, context: Sequence[int], subset: Sequence[int]) -> OracleResult:
        context = tuple(context)
        subset = tuple(subset)
        if not subset:
            raise ValueError("cannot evaluate an empty test subset")
        ids = self.instance.test_ids
        taus, weights, resids = {}, {}, {}
        worst = Fraction(1)
        for k, m in enumerate(self.instance.matrices):
            tau, w, resid = self._metric_tau(k, context, subset)
            taus[m.metric_name] = float(tau)
            weights[m.metric_name] = {ids[c]: float(x) for c, x in zip(subset, w)}
            resids[m.metric_name] = resid
            worst = min(worst, tau)
        return OracleResult(worst >= self.target, taus, weights, resids, worst)

    def solution(self, context: Sequence[int], subset: Sequence[int], **meta) -> Solution:
        """Package ``subset`` as a :class:`Solution` with weights fitted for ``context``."""
        subset = tuple(sorted(subset))
        res = self.evaluate(tuple(context), subset)
        return Solution(
            tests=subset,
            test_ids=self.instance.test_ids,
            weights=res.weights,
            achieved_tau=res.achieved_tau,
            total_cost=self.instance.subset_cost(subset),
            feasible=res.feasible,
            **meta,
        )


def _as_indices(instance: RtsmInstance, tests) -> tuple[int, ...]:
    return instance.indices(set(tests))


def solves(instance: RtsmInstance, subset: Iterable[str], **fit_options) -> OracleResult:
    """Check ``subset`` against the ranking induced by all tests of ``instance``."""
    idx = _as_indices(instance, subset)
    if not idx:
        raise ValueError("cannot evaluate an empty test subset")
    return FeasibilityOracle(instance, **fit_options).evaluate(range(instance.n_tests), idx)


def solves_in_context(full_context: Iterable[str], subset: Iterable[str], instance: RtsmInstance,
                      **fit_options) -> OracleResult:
    """Like :func:`solves`, but the reference totals sum over ``full_context`` only."""
    ctx = _as_indices(instance, full_context)
    idx = _as_indices(instance, subset)
    extra = set(idx) - set(ctx)
    if extra:
        raise ValueError(f"subset is not contained in the context: {[instance.test_ids[j] for j in sorted(extra)]}")
    if not idx:
        raise ValueError("cannot evaluate an empty test subset")
    return FeasibilityOracle(instance, **fit_options).evaluate(ctx, idx)
