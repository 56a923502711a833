"""Numpy fallback implementations of the hot kernels.

These match the compiled extension in `_ckernels.pyx` operation for
operation; the dispatch module picks whichever is available. Integer
accumulations are exact, so both backends produce identical subset
sweeps; floating-point results agree to summation-order rounding.
"""

from __future__ import annotations

import numpy as np


def tie_averaged_ap(scores: np.ndarray, positives: np.ndarray) -> float:
    """Average precision of a pooled list sorted by descending score.

    Runs of equal scores are treated as unordered: the returned value is
    the exact expectation of AP over uniformly random orderings within
    each tied run, computed in closed form. For a run of g items with p
    positives, preceded by c positives and r0 items, slot t contributes

        (p/g) * (c + 1 + (t-1)(p-1)/(g-1)) / (r0 + t)

    which is P(slot t positive) times the expected precision there. The
    result is normalized by the number of positives present in the list;
    an all-negative list scores 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=np.float64)
    m = scores.size
    if m == 0:
        return 0.0
    total_pos = pos.sum()
    if total_pos == 0:
        return 0.0
    new_group = np.empty(m, dtype=bool)
    new_group[0] = True
    np.not_equal(scores[1:], scores[:-1], out=new_group[1:])
    starts = np.flatnonzero(new_group)
    gid = np.cumsum(new_group) - 1
    g = np.diff(np.append(starts, m)).astype(np.float64)
    p = np.add.reduceat(pos, starts)
    c_before = np.concatenate(([0.0], np.cumsum(p)[:-1]))
    t = (np.arange(m) - starts[gid] + 1).astype(np.float64)
    gg = g[gid]
    pp = p[gid]
    tie_span = np.where(gg > 1.0, gg - 1.0, 1.0)
    expected_cum = c_before[gid] + 1.0 + (t - 1.0) * (pp - 1.0) / tie_span
    contrib = (pp / gg) * expected_cum / (starts[gid] + t)
    return float(contrib.sum() / total_pos)


def subset_vote_sums(bits: np.ndarray):
    """Vote-count sums for every model subset of size >= 2.

    ``bits`` is a (D, N) 0/1 matrix of per-example correctness for D
    models. Subsets are visited depth-first in lexicographic order of
    their sorted index tuples; for each subset of size s the per-example
    vote count l = sum of member rows yields three exact integer sums:

        sum_l     = sum_j l_j
        sum_pair  = sum_j l_j * (s - l_j)
        sum_min   = sum_j min(l_j, s - l_j)

    Returns (sizes, sum_l, sum_pair, sum_min) aligned arrays with one
    row per emitted subset.
    """
    bits = np.asarray(bits, dtype=np.int64)
    n_models, _ = bits.shape
    n_out = (1 << n_models) - 1 - n_models
    sizes = np.empty(n_out, dtype=np.int32)
    sum_l = np.empty(n_out, dtype=np.int64)
    sum_pair = np.empty(n_out, dtype=np.int64)
    sum_min = np.empty(n_out, dtype=np.int64)
    votes = np.zeros(bits.shape[1], dtype=np.int64)
    cursor = 0

    def visit(first: int, depth: int) -> None:
        nonlocal cursor
        for d in range(first, n_models):
            votes_d = bits[d]
            votes.__iadd__(votes_d)
            size = depth + 1
            if size >= 2:
                sizes[cursor] = size
                sum_l[cursor] = votes.sum()
                sum_pair[cursor] = (votes * (size - votes)).sum()
                sum_min[cursor] = np.minimum(votes, size - votes).sum()
                cursor += 1
            visit(d + 1, size)
            votes.__isub__(votes_d)

    visit(0, 0)
    return sizes, sum_l, sum_pair, sum_min
