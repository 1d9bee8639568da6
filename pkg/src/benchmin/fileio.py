"""CSV matrix/cost files and JSON solution files.

Matrix CSV: header row ``<corner>,<test id>,...``; then one row per variant,
``<variant id>,<value>,...``. One file per metric, metric name = file stem.
Cost CSV: header ``test_id,cost`` then one row per test.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from benchmin.matrix import PerformanceMatrix, RtsmInstance, Solution

COST_SOURCES = ("unit", "file", "mean-runtime")


class IngestError(ValueError):
    """Malformed or inconsistent input file."""


def _parse_float(text: str, where: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise IngestError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(x):
        raise IngestError(f"{where}: non-finite value {text!r}")
    return x


def read_matrix_csv(path: str | Path, metric_name: str | None = None, negate: bool = False) -> PerformanceMatrix:
    path = Path(path)
    name = metric_name or path.stem
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    test_ids = header[1:]
    if not test_ids:
        raise IngestError(f"{path}:1: no test columns")
    seen = set()
    for col, tid in enumerate(test_ids, start=2):
        if tid in seen:
            raise IngestError(f"{path}:1: duplicate test id {tid!r} (column {col})")
        seen.add(tid)
    variant_ids, data, seen = [], [], set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise IngestError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        vid = row[0].strip()
        if vid in seen:
            raise IngestError(f"{path}:{lineno}: duplicate variant id {vid!r}")
        seen.add(vid)
        variant_ids.append(vid)
        data.append([_parse_float(c, f"{path}:{lineno}: column {test_ids[i]!r}")
                     for i, c in enumerate(row[1:])])
    if not data:
        raise IngestError(f"{path}: no variant rows")
    values = np.array(data, dtype=np.float64)
    if negate:
        values = -values
    return PerformanceMatrix(variant_ids, test_ids, values, name)


def write_matrix_csv(matrix: PerformanceMatrix, path: str | Path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *matrix.test_ids])
        for vid, row in zip(matrix.variant_ids, matrix.values):
            w.writerow([vid, *(repr(float(x)) for x in row)])


def read_cost_csv(path: str | Path, test_ids: Sequence[str]) -> np.ndarray:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    costs = {}
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip() == "test_id":
            continue
        if len(row) != 2:
            raise IngestError(f"{path}:{lineno}: expected 'test_id,cost'")
        tid = row[0].strip()
        if tid in costs:
            raise IngestError(f"{path}:{lineno}: duplicate test id {tid!r}")
        c = _parse_float(row[1], f"{path}:{lineno}")
        if c < 0:
            raise IngestError(f"{path}:{lineno}: negative cost {c}")
        costs[tid] = c
    missing = [t for t in test_ids if t not in costs]
    if missing:
        raise IngestError(f"{path}: no cost for test {missing[0]!r}")
    unknown = sorted(set(costs) - set(test_ids))
    if unknown:
        raise IngestError(f"{path}: cost given for unknown test {unknown[0]!r}")
    return np.array([costs[t] for t in test_ids])


def write_cost_csv(test_ids: Sequence[str], costs: Iterable[float], path: str | Path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_id", "cost"])
        for tid, c in zip(test_ids, costs):
            w.writerow([tid, repr(float(c))])


def ingest(matrix_paths: Sequence[str | Path], *, cost_source: str = "unit", cost_file: str | Path | None = None,
           negate: Iterable[str] = (), runtime_metric: str | None = None,
           target_tau: float = 1.0) -> RtsmInstance:
    """Build an instance from one CSV per metric.

    ``negate`` names metrics (file stems) where lower is better. With
    ``cost_source="mean-runtime"`` each test costs the mean over variants of
    the raw (un-negated) ``runtime_metric`` values.
    """
    if cost_source not in COST_SOURCES:
        raise IngestError(f"unknown cost source {cost_source!r}; expected one of {COST_SOURCES}")
    if not matrix_paths:
        raise IngestError("no matrix files given")
    negate = set(negate)
    raw = [read_matrix_csv(p) for p in matrix_paths]
    names = [m.metric_name for m in raw]
    unknown = negate - set(names)
    if unknown:
        raise IngestError(f"--negate names unknown metric {sorted(unknown)[0]!r}")
    first, first_path = raw[0], matrix_paths[0]
    for m, p in zip(raw[1:], matrix_paths[1:]):
        if m.variant_ids != first.variant_ids:
            bad = next((v for v in m.variant_ids if v not in set(first.variant_ids)), None)
            detail = f"variant {bad!r} not in {first_path}" if bad else "variant order differs"
            raise IngestError(f"{p}: rows do not match {first_path}: {detail}")
        if m.test_ids != first.test_ids:
            extra = [t for t in m.test_ids if t not in set(first.test_ids)]
            missing = [t for t in first.test_ids if t not in set(m.test_ids)]
            if extra:
                detail = f"column {extra[0]!r} not in {first_path}"
            elif missing:
                detail = f"column {missing[0]!r} missing"
            else:
                detail = "column order differs"
            raise IngestError(f"{p}: test columns do not match {first_path}: {detail}")
    if cost_source == "unit":
        costs = np.ones(first.n_tests)
    elif cost_source == "file":
        if cost_file is None:
            raise IngestError("cost source 'file' needs a cost file")
        costs = read_cost_csv(cost_file, first.test_ids)
    else:
        if runtime_metric is None:
            runtime_metric = names[0] if len(names) == 1 else None
        if runtime_metric not in names:
            raise IngestError("cost source 'mean-runtime' needs --runtime-metric naming one of the matrices")
        costs = raw[names.index(runtime_metric)].values.mean(axis=0)
        if np.any(costs < 0):
            raise IngestError(f"metric {runtime_metric!r} has negative mean runtimes")
    mats = tuple(PerformanceMatrix(m.variant_ids, m.test_ids, -m.values, m.metric_name)
                 if m.metric_name in negate else m for m in raw)
    try:
        return RtsmInstance(mats, costs, target_tau)
    except ValueError as exc:
        raise IngestError(str(exc)) from None


def emit(instance: RtsmInstance, directory: str | Path) -> tuple[list[Path], Path]:
    """Write one CSV per metric plus ``costs.csv``; inverse of :func:`ingest`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in instance.matrices:
        p = directory / f"{m.metric_name}.csv"
        write_matrix_csv(m, p)
        paths.append(p)
    cost_path = directory / "costs.csv"
    write_cost_csv(instance.test_ids, instance.costs, cost_path)
    return paths, cost_path


def solution_to_dict(solution: Solution) -> dict:
    return {
        "tests": list(solution.selected_tests),
        "weights": {m: {t: w[t] for t in solution.selected_tests} for m, w in solution.weights.items()},
        "tau": solution.achieved_tau,
        "cost": solution.total_cost,
        "method": solution.method,
        "seed": solution.seed,
        "feasible": solution.feasible,
        "timed_out": solution.timed_out,
        "iterations": solution.iterations,
    }


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_solution(solution: Solution, path: str | Path):
    Path(path).write_text(dumps(solution_to_dict(solution)), encoding="utf-8", newline="\n")


def read_solution(path: str | Path) -> dict:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("tests", "weights", "tau", "cost"):
        if key not in data:
            raise IngestError(f"{path}: missing field {key!r}")
    return data
