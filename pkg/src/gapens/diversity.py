"""Per-class non-pairwise diversity measures over model ensembles and
the exhaustive subset sweep.

Both measures work on per-example vote counts: how many of the D models
got a given (example, class) right. The interrater statistic corrects
agreement for chance and is undefined when the pooled accuracy is 0 or
1; the entropy statistic normalizes near-split votes into [0, 1].
Undefined values are first-class results, not errors: rare classes hit
the degenerate denominators constantly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .core import AlignmentError, _freeze
from .metrics import OracleMatrix, _check_same_dims

MAX_SWEEP_MODELS = 20


def _class_bits(oracles: list[OracleMatrix], class_idx: int) -> np.ndarray:
    """(D, N) correctness matrix for one class."""
    if not oracles:
        raise ValueError("need at least one oracle")
    _check_same_dims(oracles)
    if not 0 <= class_idx < oracles[0].n_classes:
        raise IndexError(f"class {class_idx} out of range")
    return np.ascontiguousarray(np.stack([o.bits[:, class_idx] for o in oracles]))


def correct_counts(oracles: list[OracleMatrix], class_idx: int) -> np.ndarray:
    """Per-example count of models that got this class right (0..D)."""
    return _class_bits(oracles, class_idx).sum(axis=0, dtype=np.int64)


def _kappa_from_sums(sum_l, sum_pair, size, n) -> Optional[float]:
    p = sum_l / (size * n)
    if p <= 0.0 or p >= 1.0:
        return None
    return float(1.0 - sum_pair / (n * size * (size - 1) * p * (1.0 - p)))


def _entropy_from_sums(sum_min, size, n) -> float:
    # size - ceil(size/2) == size // 2
    return float(sum_min / (n * (size // 2)))


def interrater_kappa(oracles: list[OracleMatrix], class_idx: int) -> Optional[float]:
    """Chance-corrected agreement for one class; lower means more diverse.

    Returns None when the pooled per-class accuracy is 0 or 1, where the
    chance correction divides by zero. Always <= 1 when defined; equals 1
    under unanimity with non-degenerate accuracy.
    """
    d = len(oracles)
    if d < 2:
        raise ValueError("interrater agreement needs at least 2 models")
    l = correct_counts(oracles, class_idx)
    n = l.size
    return _kappa_from_sums(float(l.sum()), float((l * (d - l)).sum()), d, n)


def entropy_diversity(oracles: list[OracleMatrix], class_idx: int) -> float:
    """Normalized near-split vote mass for one class; higher means more
    diverse. 0 exactly when every example is unanimous."""
    d = len(oracles)
    if d < 2:
        raise ValueError("entropy diversity needs at least 2 models")
    l = correct_counts(oracles, class_idx)
    return _entropy_from_sums(float(np.minimum(l, d - l).sum()), d, l.size)


@dataclass(frozen=True)
class DiversityCurve:
    """Per ensemble-size statistics of a measure over all size-s subsets."""

    class_idx: int
    measure: str
    sizes: np.ndarray  # contiguous 2..D
    subset_count: np.ndarray
    minimum: np.ndarray
    mean: np.ndarray
    maximum: np.ndarray
    undefined_count: np.ndarray

    def __post_init__(self):
        for name in ("sizes", "subset_count", "minimum", "mean", "maximum", "undefined_count"):
            object.__setattr__(self, name, _freeze(np.asarray(getattr(self, name))))


def _sweep_one_class(oracles, class_idx: int, measure: str, d: int) -> DiversityCurve:
    bits = _class_bits(oracles, class_idx)
    n = bits.shape[1]
    sizes, sum_l, sum_pair, sum_min = _kernels.subset_vote_sums(bits)
    s = sizes.astype(np.float64)
    if measure == "entropy":
        values = sum_min / (n * (sizes // 2)).astype(np.float64)
        defined = np.ones(values.size, dtype=bool)
    else:
        p = sum_l / (s * n)
        defined = (p > 0.0) & (p < 1.0)
        values = np.empty(s.size, dtype=np.float64)
        values[defined] = 1.0 - sum_pair[defined] / (
            n * s[defined] * (s[defined] - 1.0) * p[defined] * (1.0 - p[defined])
        )
        values[~defined] = np.nan
    size_axis = np.arange(2, d + 1)
    mins = np.full(size_axis.size, np.nan)
    means = np.full(size_axis.size, np.nan)
    maxs = np.full(size_axis.size, np.nan)
    counts = np.zeros(size_axis.size, dtype=np.int64)
    undef = np.zeros(size_axis.size, dtype=np.int64)
    for i, size in enumerate(size_axis):
        at_size = sizes == size
        counts[i] = int(at_size.sum())
        ok = at_size & defined
        undef[i] = counts[i] - int(ok.sum())
        if ok.any():
            v = values[ok]
            mins[i] = v.min()
            means[i] = v.sum() / v.size
            maxs[i] = v.max()
    return DiversityCurve(
        class_idx=class_idx,
        measure=measure,
        sizes=size_axis,
        subset_count=counts,
        minimum=mins,
        mean=means,
        maximum=maxs,
        undefined_count=undef,
    )


def subset_sweep(
    oracles: list[OracleMatrix], classes, measure: str = "entropy", threads: int = 1
) -> list[DiversityCurve]:
    """Exhaustively evaluate a measure over every model subset.

    For each requested class and each size s in [2, D], reports min,
    mean, and max of the measure over all C(D, s) subsets. Undefined
    interrater values are excluded from the statistics and counted.
    Subsets are enumerated lexicographically; capped at D=20 models.
    Classes are independent, so ``threads`` workers may process them
    concurrently; results keep the requested class order.
    """
    d = len(oracles)
    if d < 2:
        raise ValueError("sweep needs at least 2 models")
    if d > MAX_SWEEP_MODELS:
        raise ValueError(f"exhaustive sweep capped at {MAX_SWEEP_MODELS} models, got {d}")
    if measure not in ("entropy", "kappa"):
        raise ValueError(f"unknown measure {measure!r}")
    class_list = [int(c) for c in classes]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda c: _sweep_one_class(oracles, c, measure, d), class_list))
    return [_sweep_one_class(oracles, c, measure, d) for c in class_list]
