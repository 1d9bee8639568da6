"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per kernel and size, plus an end-to-end solver run with each
backend (selected through ``BENCHMIN_PURE_PYTHON`` in a subprocess).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from benchmin import _kernels_py

try:
    from benchmin import _kernels
except ImportError:
    sys.exit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

END_TO_END = """
import time
from benchmin import BACKEND
from benchmin.harness import SyntheticSpec, generate_synthetic
from benchmin.meta import minimize
inst = generate_synthetic(SyntheticSpec(40, 256, "duplicate_blocks", 0.01, 0, blocks=16))
t = time.perf_counter()
sol = minimize(inst, "biss", seed=0)
print(BACKEND, len(sol.tests), time.perf_counter() - t)
"""


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    for n_variants, n_cols in ((50, 16), (500, 128), (2000, 512)):
        values = rng.random((n_variants, n_cols * 2))
        cols = np.ascontiguousarray(rng.permutation(n_cols * 2)[:n_cols], dtype=np.int_)
        weights = rng.normal(size=n_cols)
        args = (values, cols, weights)
        assert np.array_equal(_kernels.ordered_totals(*args), _kernels_py.ordered_totals(*args))
        yield (f"ordered_totals {n_variants}x{n_cols}",
               best_of(lambda: _kernels_py.ordered_totals(*args), repeat, 20),
               best_of(lambda: _kernels.ordered_totals(*args), repeat, 20))
    for n in (50, 500, 5000):
        a = np.ascontiguousarray(rng.permutation(n) + 1, dtype=np.int_)
        b = np.ascontiguousarray(rng.permutation(n) + 1, dtype=np.int_)
        assert _kernels.discordant_pairs(a, b) == _kernels_py.discordant_pairs(a, b)
        yield (f"discordant_pairs n={n}",
               best_of(lambda: _kernels_py.discordant_pairs(a, b), repeat, 20),
               best_of(lambda: _kernels.discordant_pairs(a, b), repeat, 20))


def end_to_end():
    rows = {}
    for pure in ("1", "0"):
        env = dict(os.environ, BENCHMIN_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                             capture_output=True, text=True).stdout.split()
        rows[out[0]] = (int(out[1]), float(out[2]))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"{'kernel':32} {'python [us]':>12} {'cython [us]':>12} {'speedup':>8}")
    for name, py, cy in kernel_rows(args.repeat):
        print(f"{name:32} {py * 1e6:12.1f} {cy * 1e6:12.1f} {py / cy:8.1f}")
    rows = end_to_end()
    py_tests, py_s = rows["python"]
    cy_tests, cy_s = rows["cython"]
    print(f"\nsolver, 40x256 nested duplicates: python {py_s:.2f}s, cython {cy_s:.2f}s "
          f"(kept {py_tests} vs {cy_tests} tests)")


if __name__ == "__main__":
    main()
