"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Both backends accumulate in the same order, so totals (and therefore
rankings and solver trajectories) are bit-identical whichever is loaded.
"""

import numpy as np


def ordered_totals(values, cols, weights):
    """Weighted row totals accumulated left to right over ``cols``."""
    acc = np.zeros(values.shape[0], dtype=np.float64)
    for c, w in zip(cols, weights):
        acc = acc + w * values[:, c]
    return acc


def _merge_count(seq):
    if len(seq) < 2:
        return seq, 0
    mid = len(seq) // 2
    left, inv_l = _merge_count(seq[:mid])
    right, inv_r = _merge_count(seq[mid:])
    merged = []
    inv = inv_l + inv_r
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            inv += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, inv


def discordant_pairs(ranks_a, ranks_b):
    n = len(ranks_a)
    if n <= 1024:
        return discordant_pairs_quadratic(ranks_a, ranks_b)
    seq = np.empty(n, dtype=np.int_)
    seq[np.asarray(ranks_a) - 1] = ranks_b
    return _merge_count(seq.tolist())[1]


def discordant_pairs_quadratic(ranks_a, ranks_b):
    a = np.asarray(ranks_a)
    b = np.asarray(ranks_b)
    da = a[:, None] < a[None, :]
    db = b[:, None] < b[None, :]
    return int(np.count_nonzero(np.triu(da != db, k=1)))
