"""Command-line entry point: ``benchmin {minimize,verify,study,synth,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from benchmin import kernels
from benchmin.fileio import dumps, emit, ingest, read_solution, write_solution
from benchmin.harness import (SUITES, STRUCTURES, SyntheticSpec, compare_methods,
                              cumulative_score_distribution, default_workers, format_redundancy,
                              generate_synthetic, mean_ci, records_from_csv, records_to_csv, redundancy_report,
                              rows_to_csv, run_matrix_study, summarize, synthetic_suite)
from benchmin.matrix import Solution, cost_reduction, full_ranking
from benchmin.meta import METHODS, minimize
from benchmin.oracle import predicted_tau

DEFAULT_DEADLINE = 3000.0
EXIT_OK, EXIT_INPUT, EXIT_TIMEOUT = 0, 1, 2


class UsageError(ValueError):
    pass


@dataclass
class RunManifest:
    matrices: list[str]
    negate: list[str] = field(default_factory=list)
    cost_source: str = "unit"
    cost_file: str | None = None
    runtime_metric: str | None = None
    target_tau: float = 1.0
    method: str = "biss"
    seeds: list[int] = field(default_factory=lambda: [0])
    n_splits: int | str = "auto"
    deadline: float = DEFAULT_DEADLINE
    out: str = "out"

    def __post_init__(self):
        if not self.matrices:
            raise UsageError("at least one --matrix is required")
        if not -1.0 <= self.target_tau <= 1.0:
            raise UsageError(f"target tau {self.target_tau} outside [-1, 1]")
        if not self.deadline > 0:
            raise UsageError("deadline must be positive")
        if not self.seeds:
            raise UsageError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise UsageError("duplicate seeds")
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n_splits != "auto" and (not isinstance(self.n_splits, int) or self.n_splits < 1):
            raise UsageError("n_splits must be a positive integer or 'auto'")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"{path}: cannot read manifest: {exc}") from None
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"{path}: unknown manifest fields {sorted(unknown)}")
        # file paths in a manifest are relative to the manifest itself
        base = path.parent
        for key in ("cost_file",):
            if data.get(key):
                data[key] = str(base / data[key])
        if "matrices" in data:
            data["matrices"] = [str(base / p) for p in data["matrices"]]
        return cls(**data)

    def instance(self):
        return ingest(self.matrices, cost_source=self.cost_source, cost_file=self.cost_file,
                      negate=self.negate, runtime_metric=self.runtime_metric, target_tau=self.target_tau)


def parse_seeds(text: str) -> list[int]:
    """``"0,3,5-7"`` -> ``[0, 3, 5, 6, 7]``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise UsageError(f"bad seed list {text!r}") from None
    return seeds


def parse_splits(text: str) -> int | str:
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"n-splits must be an integer or 'auto', got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


# -- minimize ----------------------------------------------------------------------

def _manifest_from_args(args) -> RunManifest:
    data = {}
    if args.manifest:
        data = asdict(RunManifest.load(args.manifest))
    overrides = {
        "matrices": args.matrix, "negate": args.negate, "cost_source": args.cost_source,
        "cost_file": args.cost_file, "runtime_metric": args.runtime_metric,
        "target_tau": args.target_tau, "method": args.method,
        "seeds": parse_seeds(args.seeds) if args.seeds else None,
        "n_splits": parse_splits(args.n_splits) if args.n_splits else None,
        "deadline": args.deadline, "out": args.out,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    data.setdefault("matrices", [])
    return RunManifest(**data)


def _solve_seed(job) -> Solution:
    instance, manifest, seed = job
    return minimize(instance, manifest.method, seed=seed, n_splits=manifest.n_splits,
                    deadline_seconds=manifest.deadline)


def cmd_minimize(args) -> int:
    manifest = _manifest_from_args(args)
    if manifest.method == "exact" and manifest.target_tau < 1.0:
        raise UsageError("exact backend supports tau = 1 only")
    instance = manifest.instance()
    jobs = [(instance, manifest, s) for s in manifest.seeds]
    workers = args.workers or default_workers()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            solutions = list(pool.map(_solve_seed, jobs))
    else:
        solutions = [_solve_seed(j) for j in jobs]

    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    reductions, stalled = [], []
    for seed, sol in zip(manifest.seeds, solutions):
        write_solution(sol, out / f"solution-seed{seed}.json")
        red = cost_reduction(instance, sol)
        reductions.append(red)
        if sol.timed_out and red == 0.0:
            stalled.append(seed)
    best_i = min(range(len(solutions)),
                 key=lambda i: (solutions[i].total_cost, sorted(solutions[i].selected_tests)))
    best = solutions[best_i]
    mean, half = mean_ci(reductions)
    summary = {
        "method": manifest.method,
        "seeds": manifest.seeds,
        "n_tests": instance.n_tests,
        "n_variants": instance.n_variants,
        "total_cost": instance.total_cost,
        "best": {"seed": manifest.seeds[best_i], "cost": best.total_cost,
                 "cost_ratio": best.total_cost / instance.total_cost,
                 "tests": list(best.selected_tests), "tau": best.achieved_tau},
        "cost_reduction_mean": mean,
        "cost_reduction_ci95": half,
        "timed_out_seeds": [s for s, sol in zip(manifest.seeds, solutions) if sol.timed_out],
    }
    (out / "summary.json").write_text(dumps(summary), encoding="utf-8", newline="\n")
    (out / "manifest.json").write_text(dumps(_portable(manifest, out)), encoding="utf-8", newline="\n")
    timings = {f"seed{s}": sol.wall_seconds for s, sol in zip(manifest.seeds, solutions)}
    (out / "timings.json").write_text(dumps(timings), encoding="utf-8", newline="\n")

    print(f"best cost {best.total_cost:g} of {instance.total_cost:g} "
          f"({len(best.tests)}/{instance.n_tests} tests, seed {manifest.seeds[best_i]}); "
          f"mean reduction {mean:.4f} +- {half:.4f}")
    if stalled:
        print(f"seeds {stalled} timed out without any reduction", file=sys.stderr)
        return EXIT_TIMEOUT
    return EXIT_OK


def _portable(manifest: RunManifest, out: Path) -> dict:
    """Manifest with input paths relative to the output directory, so a copy
    of it can be passed back through ``--manifest``."""
    data = asdict(manifest)

    def rel(p):
        return os.path.relpath(Path(p).resolve(), out.resolve())

    data["matrices"] = [rel(p) for p in manifest.matrices]
    if manifest.cost_file:
        data["cost_file"] = rel(manifest.cost_file)
    data["out"] = "."
    return data


# -- verify ------------------------------------------------------------------------

def verify_solution(instance, data: dict) -> tuple[bool, str]:
    """Re-check a solution file against ``instance`` using only its stored weights."""
    tests = data["tests"]
    unknown = [t for t in tests if t not in set(instance.test_ids)]
    if unknown:
        return False, f"unknown test {unknown[0]!r}"
    if not tests:
        return False, "empty test list"
    cols = sorted(instance.indices(tests))
    cost = instance.subset_cost(cols)
    if not math.isclose(cost, data["cost"], rel_tol=1e-12, abs_tol=1e-12):
        return False, f"cost {data['cost']} does not match recomputed {cost}"
    worst = Fraction(1)
    for m in instance.matrices:
        weights = data["weights"].get(m.metric_name)
        if weights is None:
            return False, f"no weights for metric {m.metric_name!r}"
        try:
            w = [float(weights[m.test_ids[c]]) for c in cols]
        except KeyError as exc:
            return False, f"metric {m.metric_name!r}: no weight for test {exc.args[0]!r}"
        ref = full_ranking(m)
        pred = kernels.ordered_totals(m.values, cols, w)
        worst = min(worst, predicted_tau(ref.totals, ref, pred))
    if worst < Fraction(instance.target_tau):
        return False, f"tau {float(worst):.6g} below target {instance.target_tau:g}"
    return True, f"tau {float(worst):.6g}, cost {cost:g}"


def cmd_verify(args) -> int:
    files: list[Path] = []
    manifest = None
    for p in map(Path, args.paths):
        if p.is_dir():
            files.extend(sorted(p.glob("solution-seed*.json")))
            if manifest is None and (p / "manifest.json").exists() and not args.matrix:
                manifest = RunManifest.load(p / "manifest.json")
        else:
            files.append(p)
    if args.matrix:
        manifest = RunManifest(matrices=args.matrix, negate=args.negate or [],
                               cost_source=args.cost_source or "unit", cost_file=args.cost_file,
                               runtime_metric=args.runtime_metric,
                               target_tau=1.0 if args.target_tau is None else args.target_tau)
    elif manifest is not None and args.target_tau is not None:
        manifest.target_tau = args.target_tau
    if manifest is None:
        raise UsageError("verify needs --matrix or a run directory containing manifest.json")
    if not files:
        raise UsageError("no solution files to verify")
    instance = manifest.instance()
    failed = 0
    for f in files:
        ok, detail = verify_solution(instance, read_solution(f))
        failed += not ok
        print(f"{'ok  ' if ok else 'FAIL'} {f}: {detail}")
    return EXIT_OK if failed == 0 else EXIT_INPUT


# -- study / synth / report ----------------------------------------------------------

def cmd_study(args) -> int:
    instances = {}
    for name in args.suite or []:
        for bid, inst in synthetic_suite(name, args.suite_seed).items():
            instances[f"{name}/{bid}"] = inst
    if args.matrix:
        inst = ingest(args.matrix, cost_source=args.cost_source or "unit", cost_file=args.cost_file,
                      negate=args.negate or [], runtime_metric=args.runtime_metric,
                      target_tau=1.0 if args.target_tau is None else args.target_tau)
        instances[args.name or Path(args.matrix[0]).stem] = inst
    if not instances:
        raise UsageError("study needs --suite or --matrix")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method {bad[0]!r}; expected one of {METHODS}")
    records = run_matrix_study(instances, methods, parse_seeds(args.seeds), _floats(args.fractions),
                               deadline_seconds=args.deadline, n_splits=parse_splits(args.n_splits),
                               refit=args.refit, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_to_csv(records), encoding="utf-8", newline="\n")
    cdf = cumulative_score_distribution(records, ("method", "variant_fraction"))
    (out / "cdf.csv").write_text(rows_to_csv(cdf), encoding="utf-8", newline="\n")
    rows = summarize(records)
    (out / "summary.json").write_text(dumps(rows), encoding="utf-8", newline="\n")
    text = _report_text(records, _pairs(args.compare))
    (out / "report.txt").write_text(text, encoding="utf-8", newline="\n")
    print(text, end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.variants, args.tests, args.structure, args.noise, args.seed, args.blocks)
    inst = generate_synthetic(spec, args.target_tau)
    paths, cost_path = emit(inst, args.out)
    for p in paths + [cost_path]:
        print(p)
    return EXIT_OK


def _pairs(specs) -> list[tuple[str, str]]:
    out = []
    for spec in specs or []:
        a, sep, b = spec.partition(":")
        if not sep or not a or not b:
            raise UsageError(f"--compare expects better:worse, got {spec!r}")
        out.append((a, b))
    return out


def _report_text(records, compare) -> str:
    lines = ["benchmark                      method   frac   n  reduction        tau_on_full      score"]
    for r in summarize(records):
        lines.append(f"{r['benchmark_id']:<30} {r['method']:<7} {r['variant_fraction']:<5g} {r['n']:>3}"
                     f"  {r['cost_reduction_mean']:.3f}+-{r['cost_reduction_ci95']:.3f}"
                     f"  {r['tau_on_full_mean']:.3f}+-{r['tau_on_full_ci95']:.3f}"
                     f"  {r['score_mean']:.3f}+-{r['score_ci95']:.3f}")
    for better, worse in compare:
        res = compare_methods(records, better, worse)
        lines.append(f"wilcoxon {better} > {worse}: n={res['n_pairs']} nonzero={res['n_nonzero']} "
                     f"p={res['p_value']:.4g} rank-biserial={res['rank_biserial']:.3f}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        manifest = RunManifest.load(path / "manifest.json")
        instance = manifest.instance()
        sols = []
        for f in sorted(path.glob("solution-seed*.json")):
            data = read_solution(f)
            idx = tuple(sorted(instance.indices(data["tests"])))
            sols.append(Solution(idx, instance.test_ids, data["weights"], data["tau"], data["cost"],
                                 data.get("feasible", True), data.get("method", ""), data.get("seed")))
        print(format_redundancy(redundancy_report(instance, sols)), end="")
        return EXIT_OK
    try:
        records = records_from_csv(path.read_text(encoding="utf-8"))
    except (OSError, KeyError) as exc:
        raise UsageError(f"{path}: not a records file: {exc}") from None
    print(_report_text(records, _pairs(args.compare)), end="")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _add_input_flags(p):
    p.add_argument("--matrix", action="append", metavar="CSV",
                   help="metric matrix CSV (repeat for several metrics)")
    p.add_argument("--negate", action="append", metavar="METRIC",
                   help="metric (file stem) where lower values are better")
    p.add_argument("--cost-source", choices=("unit", "file", "mean-runtime"))
    p.add_argument("--cost-file", metavar="CSV")
    p.add_argument("--runtime-metric", metavar="METRIC")
    p.add_argument("--target-tau", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="benchmin", description="Rank-preserving benchmark reduction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("minimize", help="reduce one benchmark over several seeds")
    _add_input_flags(p)
    p.add_argument("--manifest", metavar="JSON", help="run manifest; explicit flags override it")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--seeds", help="e.g. 0,1,2 or 0-9")
    p.add_argument("--n-splits", help="chunk count or 'auto'")
    p.add_argument("--deadline", type=float, help=f"seconds per seed (default {DEFAULT_DEADLINE:g})")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel seeds (default $BENCHMIN_WORKERS or 1)")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("verify", help="re-check solution files against the input matrices")
    p.add_argument("paths", nargs="+", help="solution files or minimize output directories")
    _add_input_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("study", help="multi-method, multi-seed evaluation")
    p.add_argument("--suite", action="append", choices=SUITES)
    p.add_argument("--suite-seed", type=int, default=0)
    _add_input_flags(p)
    p.add_argument("--name", help="benchmark id for --matrix input")
    p.add_argument("--methods", default="biss,random,greedy,pca")
    p.add_argument("--seeds", default="0-4")
    p.add_argument("--fractions", default="1.0", help="variant fractions, e.g. 0.25,0.5,1.0")
    p.add_argument("--n-splits", default="auto")
    p.add_argument("--deadline", type=float, default=None)
    p.add_argument("--refit", action="store_true", help="refit weights on all variants before scoring")
    p.add_argument("--compare", action="append", metavar="A:B", help="one-sided test that A beats B")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="study")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("synth", help="write a generated instance as CSV files")
    p.add_argument("--structure", choices=STRUCTURES, default="duplicate_blocks")
    p.add_argument("--variants", type=int, default=10)
    p.add_argument("--tests", type=int, default=100)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-tau", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="summarize records.csv or a minimize output directory")
    p.add_argument("path")
    p.add_argument("--compare", action="append", metavar="A:B")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
