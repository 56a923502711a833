# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Semantics are defined by `_pykernels`; this module
re-implements them as tight single-pass loops. Integer outputs are
bit-identical to the fallback, floating-point outputs agree up to
summation order.
"""

from libc.stdint cimport int32_t, int64_t, uint8_t

import numpy as np


def tie_averaged_ap(const double[::1] scores, const uint8_t[::1] positives):
    """Tie-averaged average precision of a descending pooled list."""
    cdef Py_ssize_t m = scores.shape[0]
    if m == 0:
        return 0.0
    cdef Py_ssize_t i = 0, j, t
    cdef double total_pos = 0.0
    for j in range(m):
        total_pos += positives[j]
    if total_pos == 0.0:
        return 0.0
    cdef double acc = 0.0, c = 0.0
    cdef double g, p, coef, frac
    cdef Py_ssize_t r0
    while i < m:
        j = i + 1
        while j < m and scores[j] == scores[i]:
            j += 1
        p = 0.0
        for t in range(i, j):
            p += positives[t]
        g = j - i
        r0 = i
        if p > 0.0:
            coef = p / g
            for t in range(1, j - i + 1):
                if g > 1.0:
                    frac = (t - 1.0) * (p - 1.0) / (g - 1.0)
                else:
                    frac = 0.0
                acc += coef * (c + 1.0 + frac) / (r0 + t)
        c += p
        i = j
    return acc / total_pos


cdef Py_ssize_t _visit(const uint8_t[:, ::1] bits, int64_t[::1] votes,
                       Py_ssize_t first, Py_ssize_t depth,
                       int32_t[::1] sizes, int64_t[::1] sum_l,
                       int64_t[::1] sum_pair, int64_t[::1] sum_min,
                       Py_ssize_t cursor) noexcept nogil:
    cdef Py_ssize_t n_models = bits.shape[0]
    cdef Py_ssize_t n = bits.shape[1]
    cdef Py_ssize_t d, j, size
    cdef int64_t v, sl, sp, sm
    for d in range(first, n_models):
        for j in range(n):
            votes[j] += bits[d, j]
        size = depth + 1
        if size >= 2:
            sl = 0
            sp = 0
            sm = 0
            for j in range(n):
                v = votes[j]
                sl += v
                sp += v * (size - v)
                sm += v if v < size - v else size - v
            sizes[cursor] = <int32_t> size
            sum_l[cursor] = sl
            sum_pair[cursor] = sp
            sum_min[cursor] = sm
            cursor += 1
        cursor = _visit(bits, votes, d + 1, size, sizes, sum_l, sum_pair, sum_min, cursor)
        for j in range(n):
            votes[j] -= bits[d, j]
    return cursor


def subset_vote_sums(bits):
    """Vote-count sums for every model subset of size >= 2 (lex order)."""
    cdef const uint8_t[:, ::1] b = np.ascontiguousarray(bits, dtype=np.uint8)
    cdef Py_ssize_t n_models = b.shape[0]
    cdef Py_ssize_t n_out = (1 << n_models) - 1 - n_models
    sizes = np.empty(n_out, dtype=np.int32)
    sum_l = np.empty(n_out, dtype=np.int64)
    sum_pair = np.empty(n_out, dtype=np.int64)
    sum_min = np.empty(n_out, dtype=np.int64)
    votes = np.zeros(b.shape[1], dtype=np.int64)
    cdef int32_t[::1] sizes_v = sizes
    cdef int64_t[::1] sum_l_v = sum_l
    cdef int64_t[::1] sum_pair_v = sum_pair
    cdef int64_t[::1] sum_min_v = sum_min
    cdef int64_t[::1] votes_v = votes
    with nogil:
        _visit(b, votes_v, 0, 0, sizes_v, sum_l_v, sum_pair_v, sum_min_v, 0)
    return sizes, sum_l, sum_pair, sum_min
