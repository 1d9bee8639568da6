"""Experiment harness: multi-seed studies, variant subsampling, score CDFs,
synthetic instance generators and redundancy summaries."""

from __future__ import annotations

import csv
import io
import math
import os
import statistics
import time
import warnings
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np

from benchmin import kernels
from benchmin.biss import rng_stream
from benchmin.matrix import (PerformanceMatrix, RtsmInstance, Solution, full_ranking, kendall_tau,
                             score, weighted_ranking)
from benchmin.meta import minimize
from benchmin.oracle import FeasibilityOracle, predicted_tau

STRUCTURES = ("duplicate_blocks", "rank1_noise", "adversarial_all_necessary", "random_uniform")
_VARIANT_DRAW = 0x5EED


@dataclass
class EvalRecord:
    benchmark_id: str
    method: str
    seed: int
    variant_fraction: float
    cost_reduction: float
    tau_on_full: float
    score: float
    wall_seconds: float
    timed_out: bool
    iterations: int
    n_variants_used: int = 0
    n_tests_kept: int = 0
    skipped: bool = False

    def sort_key(self):
        return (self.benchmark_id, self.method, self.variant_fraction, self.seed)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("BENCHMIN_WORKERS", "1")))
    except ValueError:
        return 1


def sample_variants(n_variants: int, fraction: float, seed: int) -> list[int]:
    """Uniform subset of ``ceil(fraction * n)`` variant indices (all of them at 1.0)."""
    k = math.ceil(fraction * n_variants - 1e-12)
    if k >= n_variants:
        return list(range(n_variants))
    rng = rng_stream(seed, _VARIANT_DRAW, int(round(fraction * 1_000_000)))
    return sorted(int(i) for i in rng.choice(n_variants, size=k, replace=False))


def evaluate_on_full(instance: RtsmInstance, solution: Solution, *, refit: bool = False) -> float:
    """Worst-metric Kendall tau of ``solution`` applied to every variant of ``instance``.

    By default the solution's own weights are reused (as if new variants
    were ranked with a benchmark reduced beforehand); ``refit=True`` refits
    them on the full variant set first.
    """
    selected = solution.selected_tests
    weights = solution.weights
    if refit:
        oracle = FeasibilityOracle(instance)
        weights = oracle.evaluate(range(instance.n_tests), solution.tests).weights
    worst = Fraction(1)
    for m in instance.matrices:
        cols = sorted(m.test_index(t) for t in selected)
        w = [weights[m.metric_name][m.test_ids[c]] for c in cols]
        pred = kernels.ordered_totals(m.values, cols, w)
        ref = full_ranking(m)
        worst = min(worst, predicted_tau(ref.totals, ref, pred))
    return float(worst)


def _run_cell(args) -> EvalRecord:
    (bench_id, instance, method, seed, fraction, deadline, n_splits, refit) = args
    variants = sample_variants(instance.n_variants, fraction, seed)
    if len(variants) < 2:
        nan = float("nan")
        return EvalRecord(bench_id, method, seed, fraction, nan, nan, nan, 0.0, False, 0,
                          len(variants), 0, skipped=True)
    sub = instance if len(variants) == instance.n_variants else instance.restrict_variants(variants)
    started = time.monotonic()
    sol = minimize(sub, method, seed=seed, n_splits=n_splits, deadline_seconds=deadline)
    wall = time.monotonic() - started
    tau = evaluate_on_full(instance, sol, refit=refit)
    red = min(1.0, max(0.0, 1.0 - instance.subset_cost(sol.tests) / instance.total_cost))
    return EvalRecord(bench_id, method, seed, fraction, red, tau, score(red, tau), wall,
                      sol.timed_out, sol.iterations, len(variants), len(sol.tests))


def run_matrix_study(instances: Mapping[str, RtsmInstance], methods: Sequence[str], seeds: Sequence[int],
                     variant_fractions: Sequence[float] = (1.0,), *, deadline_seconds: float | None = None,
                     n_splits: int | str = "auto", refit: bool = False,
                     workers: int | None = None) -> list[EvalRecord]:
    """One record per (instance, method, seed, fraction) cell.

    Each cell minimizes on a uniformly sampled fraction of the variants and
    scores the kept tests on all variants. Cells that would keep fewer than
    two variants yield a ``skipped`` record.
    """
    for f in variant_fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"variant fraction {f} outside (0, 1]")
    cells = [(bid, inst, method, int(seed), float(f), deadline_seconds, n_splits, refit)
             for bid, inst in instances.items() for method in methods
             for f in variant_fractions for seed in seeds]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_cell, cells))
    else:
        records = [_run_cell(c) for c in cells]
    for r in records:
        if r.skipped:
            warnings.warn(f"{r.benchmark_id}: fraction {r.variant_fraction} keeps fewer than 2 variants; skipped")
    return sorted(records, key=EvalRecord.sort_key)


def records_to_csv(records: Iterable[EvalRecord]) -> str:
    names = [f.name for f in fields(EvalRecord)]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    w.writeheader()
    for r in sorted(records, key=EvalRecord.sort_key):
        w.writerow(asdict(r))
    return buf.getvalue()


def records_from_csv(text: str) -> list[EvalRecord]:
    types = {f.name: f.type for f in fields(EvalRecord)}
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        kw = {}
        for k, v in row.items():
            t = types[k]
            if t in ("bool", bool):
                kw[k] = v == "True"
            elif t in ("int", int):
                kw[k] = int(v)
            elif t in ("float", float):
                kw[k] = float(v)
            else:
                kw[k] = v
        out.append(EvalRecord(**kw))
    return out


def cumulative_score_distribution(records: Iterable[EvalRecord],
                                  group_by: str | Sequence[str] = "method") -> list[dict]:
    """Empirical CDF of scores per group: one row per distinct score."""
    keys = (group_by,) if isinstance(group_by, str) else tuple(group_by)
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if r.skipped:
            continue
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r.score)
    rows = []
    for g in sorted(groups):
        scores = sorted(groups[g])
        n = len(scores)
        for i, s in enumerate(scores):
            if i + 1 < n and scores[i + 1] == s:
                continue
            row = dict(zip(keys, g))
            row.update(score=s, cdf=(i + 1) / n)
            rows.append(row)
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- statistics ------------------------------------------------------------------

def mean_ci(values: Sequence[float], z: float = 1.96) -> tuple[float, float]:
    """Mean and half-width of the normal-approximation confidence interval."""
    values = [v for v in values if not math.isnan(v)]
    if not values:
        return float("nan"), float("nan")
    m = statistics.fmean(values)
    if len(values) < 2:
        return m, 0.0
    return m, z * statistics.stdev(values) / math.sqrt(len(values))


def summarize(records: Iterable[EvalRecord],
              by: Sequence[str] = ("benchmark_id", "method", "variant_fraction")) -> list[dict]:
    groups: dict[tuple, list[EvalRecord]] = {}
    for r in records:
        if not r.skipped:
            groups.setdefault(tuple(getattr(r, k) for k in by), []).append(r)
    out = []
    for g in sorted(groups):
        rs = groups[g]
        row = dict(zip(by, g))
        for name in ("cost_reduction", "tau_on_full", "score"):
            m, h = mean_ci([getattr(r, name) for r in rs])
            row[f"{name}_mean"] = m
            row[f"{name}_ci95"] = h
        row["n"] = len(rs)
        row["timeouts"] = sum(r.timed_out for r in rs)
        out.append(row)
    return out


def compare_methods(records: Iterable[EvalRecord], better: str, worse: str) -> dict:
    """One-sided Wilcoxon signed-rank test that ``better`` scores higher than ``worse``.

    Scores are paired on (benchmark, fraction, seed). Effect size is the
    matched-pairs rank-biserial correlation.
    """
    from scipy.stats import rankdata, wilcoxon

    by_key: dict[tuple, dict[str, float]] = {}
    for r in records:
        if r.skipped or r.method not in (better, worse):
            continue
        by_key.setdefault((r.benchmark_id, r.variant_fraction, r.seed), {})[r.method] = r.score
    pairs = [(v[better], v[worse]) for v in by_key.values() if better in v and worse in v]
    diffs = np.array([a - b for a, b in pairs])
    nz = diffs[diffs != 0]
    result = {"better": better, "worse": worse, "n_pairs": len(pairs), "n_nonzero": int(len(nz))}
    if len(nz) == 0:
        result.update(p_value=1.0, rank_biserial=0.0)
        return result
    ranks = rankdata(np.abs(nz))
    w_plus = float(ranks[nz > 0].sum())
    w_minus = float(ranks[nz < 0].sum())
    result["rank_biserial"] = (w_plus - w_minus) / (w_plus + w_minus)
    result["p_value"] = float(wilcoxon(nz, alternative="greater").pvalue)
    return result


# -- synthetic instances ----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    n_variants: int
    n_tests: int
    structure: str = "random_uniform"
    noise_scale: float = 0.0
    seed: int = 0
    blocks: int = 1  # base columns for duplicate_blocks; n_tests must be a multiple

    def __post_init__(self):
        if self.n_variants < 2:
            raise ValueError("n_variants must be at least 2")
        if self.n_tests < 1:
            raise ValueError("n_tests must be positive")
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if self.structure == "duplicate_blocks" and (self.blocks < 1 or self.n_tests % self.blocks):
            raise ValueError("n_tests must be a positive multiple of blocks")


def _all_single_removals_break(values: np.ndarray) -> bool:
    """True when dropping any one column flips the ranking, both with unit
    weights and with refitted least-squares weights."""
    m = PerformanceMatrix([f"v{i}" for i in range(values.shape[0])],
                          [f"t{j}" for j in range(values.shape[1])], values)
    inst = RtsmInstance((m,), np.ones(values.shape[1]), 1.0)
    oracle = FeasibilityOracle(inst)
    ref = full_ranking(m)
    cols = tuple(range(values.shape[1]))
    for j in cols:
        rest = tuple(c for c in cols if c != j)
        if not rest:
            continue
        if kendall_tau(weighted_ranking(m, [m.test_ids[c] for c in rest],
                                        {m.test_ids[c]: 1.0 for c in rest}), ref) == 1.0:
            return False
        if oracle.feasible(cols, rest):
            return False
    return True


def generate_synthetic(spec: SyntheticSpec, target_tau: float = 1.0) -> RtsmInstance:
    """Build an instance with a known redundancy structure (unit costs).

    * ``duplicate_blocks``: ``blocks`` random base columns, each repeated.
    * ``rank1_noise``: outer product of a variant and a positive test vector.
    * ``adversarial_all_necessary``: nearly tied totals, so every single
      removal reorders some pair (needs fewer tests than variants).
    * ``random_uniform``: iid uniform entries.

    ``noise_scale`` adds iid Gaussian noise to every entry except for the
    adversarial structure.
    """
    rng = np.random.default_rng(spec.seed)
    v, t = spec.n_variants, spec.n_tests
    if spec.structure == "duplicate_blocks":
        base = rng.random((v, spec.blocks))
        values = np.repeat(base, t // spec.blocks, axis=1)
    elif spec.structure == "rank1_noise":
        values = np.outer(rng.random(v) + 0.5, rng.random(t) + 0.5)
    elif spec.structure == "random_uniform":
        values = rng.random((v, t))
    else:
        if t >= v:
            raise ValueError("adversarial_all_necessary needs fewer tests than variants")
        for _ in range(100):
            raw = rng.normal(size=(v, t))
            # near-tied totals: any lost column shifts predictions past the gaps
            target = 10.0 + 1e-3 * rng.permutation(v)
            values = raw - ((raw.sum(axis=1) - target) / t)[:, None]
            if _all_single_removals_break(values):
                break
        else:
            raise ValueError("could not build an all-necessary instance in 100 attempts")
    if spec.noise_scale > 0 and spec.structure != "adversarial_all_necessary":
        values = values + rng.normal(scale=spec.noise_scale, size=values.shape)
    m = PerformanceMatrix([f"v{i}" for i in range(v)], [f"t{j}" for j in range(t)], values,
                          spec.structure)
    return RtsmInstance((m,), np.ones(t), target_tau)


_SUITES = {
    # small mixed instances for multi-method studies
    "small": [
        ("dup", dict(n_variants=8, n_tests=32, structure="duplicate_blocks", blocks=4)),
        ("dup-noisy", dict(n_variants=10, n_tests=40, structure="duplicate_blocks", blocks=4,
                           noise_scale=0.01)),
        ("rank1", dict(n_variants=8, n_tests=24, structure="rank1_noise")),
        ("rank1-noisy", dict(n_variants=8, n_tests=24, structure="rank1_noise", noise_scale=0.01)),
        ("uniform", dict(n_variants=6, n_tests=20, structure="random_uniform")),
        ("adversarial", dict(n_variants=12, n_tests=6, structure="adversarial_all_necessary")),
    ],
    # many exact duplicates of more base columns than one chunk tends to keep
    "nested": [(f"nested-{i}", dict(n_variants=20, n_tests=256, structure="duplicate_blocks", blocks=16))
               for i in range(10)],
    "wide": [(f"wide-{i}", dict(n_variants=400, n_tests=512, structure="duplicate_blocks", blocks=4))
             for i in range(10)],
}
SUITES = tuple(_SUITES)


def synthetic_suite(name: str, seed: int = 0) -> dict[str, RtsmInstance]:
    """Named collection of generated instances keyed by benchmark id."""
    if name not in _SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    return {bid: generate_synthetic(SyntheticSpec(seed=seed * 1000 + i, **kw))
            for i, (bid, kw) in enumerate(_SUITES[name])}


# -- redundancy ------------------------------------------------------------------

REDUNDANT_RATIO = 0.01


def redundancy_report(instance: RtsmInstance, solutions: Sequence[Solution]) -> dict:
    """Kept-cost ratios and per-test selection counts across several seeds.

    ``highly_redundant`` is set when the median kept-cost ratio is at most 1%.
    """
    if len(solutions) < 2:
        raise ValueError("redundancy report needs solutions from at least 2 seeds")
    total = instance.total_cost
    ratios = [instance.subset_cost(s.tests) / total for s in solutions]
    freq = {tid: 0 for tid in instance.test_ids}
    for s in solutions:
        for tid in s.selected_tests:
            freq[tid] += 1
    median = statistics.median(ratios)
    return {
        "n_solutions": len(solutions),
        "min_kept_ratio": min(ratios),
        "median_kept_ratio": median,
        "max_kept_ratio": max(ratios),
        "selection_frequency": {k: c for k, c in freq.items() if c},
        "highly_redundant": median <= REDUNDANT_RATIO,
    }


def format_redundancy(report: dict) -> str:
    lines = [
        f"solutions:          {report['n_solutions']}",
        f"kept cost ratio:    min {report['min_kept_ratio']:.4g}  median {report['median_kept_ratio']:.4g}"
        f"  max {report['max_kept_ratio']:.4g}",
        f"highly redundant:   {'yes' if report['highly_redundant'] else 'no'}",
        "most selected tests:",
    ]
    top = sorted(report["selection_frequency"].items(), key=lambda kv: (-kv[1], kv[0]))[:10]
    lines += [f"  {tid}: {count}" for tid, count in top]
    return "\n".join(lines) + "\n"
