# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Must stay bit-compatible with ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def ordered_totals(const double[:, ::1] values, const long[::1] cols, const double[::1] weights):
    """Weighted row totals accumulated left to right over ``cols``."""
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t k = cols.shape[0]
    cdef Py_ssize_t i, j
    cdef long c
    cdef double w
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] acc = out
    for j in range(k):
        c = cols[j]
        w = weights[j]
        for i in range(n):
            acc[i] = acc[i] + w * values[i, c]
    return out


cdef long long _merge_count(long[::1] a, long[::1] buf, Py_ssize_t lo, Py_ssize_t hi) nogil:
    cdef Py_ssize_t mid, i, j, k
    cdef long long inv = 0
    if hi - lo < 2:
        return 0
    mid = (lo + hi) // 2
    inv += _merge_count(a, buf, lo, mid)
    inv += _merge_count(a, buf, mid, hi)
    i = lo
    j = mid
    k = lo
    while i < mid and j < hi:
        if a[i] <= a[j]:
            buf[k] = a[i]
            i += 1
        else:
            buf[k] = a[j]
            inv += mid - i
            j += 1
        k += 1
    while i < mid:
        buf[k] = a[i]
        i += 1
        k += 1
    while j < hi:
        buf[k] = a[j]
        j += 1
        k += 1
    for k in range(lo, hi):
        a[k] = buf[k]
    return inv


def discordant_pairs(const long[::1] ranks_a, const long[::1] ranks_b):
    """Number of variant pairs ordered differently by two rank vectors.

    Ranks are permutations of 1..n, so this is the inversion count of
    ``ranks_b`` read in the order given by ``ranks_a``.
    """
    cdef Py_ssize_t n = ranks_a.shape[0]
    cdef Py_ssize_t i
    cdef long long inv
    seq = np.empty(n, dtype=np.int_)
    buf = np.empty(n, dtype=np.int_)
    cdef long[::1] s = seq
    cdef long[::1] b = buf
    for i in range(n):
        s[ranks_a[i] - 1] = ranks_b[i]
    with nogil:
        inv = _merge_count(s, b, 0, n)
    return inv


def discordant_pairs_quadratic(const long[::1] ranks_a, const long[::1] ranks_b):
    cdef Py_ssize_t n = ranks_a.shape[0]
    cdef Py_ssize_t i, j
    cdef long long d = 0
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                if (ranks_a[i] < ranks_a[j]) != (ranks_b[i] < ranks_b[j]):
                    d += 1
    return d
