"""Kernel backend selection.

The Cython extension is used when it was built; otherwise the numpy
fallback is imported. Set ``BENCHMIN_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

if os.environ.get("BENCHMIN_PURE_PYTHON", "") not in ("", "0"):
    from benchmin import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from benchmin import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        from benchmin import _kernels_py as _impl
        BACKEND = "python"


def ordered_totals(values, cols, weights):
    """Return ``sum_j weights[j] * values[:, cols[j]]`` summed in ``cols`` order."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.int_)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    return _impl.ordered_totals(values, cols, weights)


def discordant_pairs(ranks_a, ranks_b):
    """Count pairs ordered differently by two permutation rank vectors."""
    return int(_impl.discordant_pairs(np.ascontiguousarray(ranks_a, dtype=np.int_),
                                      np.ascontiguousarray(ranks_b, dtype=np.int_)))


def discordant_pairs_quadratic(ranks_a, ranks_b):
    return int(_impl.discordant_pairs_quadratic(np.ascontiguousarray(ranks_a, dtype=np.int_),
                                                np.ascontiguousarray(ranks_b, dtype=np.int_)))
