"""Core data model: prediction matrices, multi-label ground truth, and
deterministic example splits.

All containers are immutable after construction (backing arrays are
marked read-only) and safe to share across threads. Scores are held as
float32, matching the on-disk format bit for bit; every metric and
optimizer upcasts to float64 internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .rng import TAG_SPLIT, make_rng


class FormatError(ValueError):
    """A file or payload does not satisfy its format contract."""


class AlignmentError(ValueError):
    """Paired inputs do not refer to the same examples in the same order."""


class NumericError(RuntimeError):
    """A numeric procedure produced non-finite or invalid values."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _check_ids(example_ids: Sequence[str], n: int) -> tuple[str, ...]:
    ids = tuple(str(i) for i in example_ids)
    if len(ids) != n:
        raise FormatError(f"expected {n} example ids, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate example ids")
    return ids


@dataclass(frozen=True)
class PredictionSet:
    """Dense per-example, per-class confidence scores for one model.

    ``scores`` is float32 with shape (n_examples, n_classes); values must
    be finite but are not range-restricted here (linear combinations of
    models legitimately leave [0, 1]). Range policy is applied at load
    and export time only.
    """

    model_name: str
    scores: np.ndarray
    example_ids: tuple[str, ...]

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float32)
        if scores.ndim != 2:
            raise FormatError(f"scores must be 2-D, got shape {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise FormatError("scores contain non-finite values")
        object.__setattr__(self, "scores", _freeze(scores))
        object.__setattr__(self, "example_ids", _check_ids(self.example_ids, scores.shape[0]))

    @property
    def n_examples(self) -> int:
        return self.scores.shape[0]

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class LabelSet:
    """Sparse multi-label ground truth: per-example sorted positive classes."""

    n_classes: int
    positives: tuple[np.ndarray, ...]
    example_ids: tuple[str, ...]

    def __post_init__(self):
        rows = []
        for i, row in enumerate(self.positives):
            arr = np.asarray(row, dtype=np.int32)
            if arr.ndim != 1:
                raise FormatError(f"positives for example {i} must be 1-D")
            if arr.size and (arr[0] < 0 or arr[-1] >= self.n_classes):
                raise FormatError(
                    f"class index out of range for example {i} (n_classes={self.n_classes})"
                )
            if arr.size > 1 and not np.all(np.diff(arr) > 0):
                raise FormatError(f"positives for example {i} not strictly increasing")
            rows.append(_freeze(arr))
        object.__setattr__(self, "positives", tuple(rows))
        object.__setattr__(self, "example_ids", _check_ids(self.example_ids, len(rows)))

    @property
    def n_examples(self) -> int:
        return len(self.positives)

    @classmethod
    def from_dense(cls, dense: np.ndarray, example_ids=None) -> "LabelSet":
        """Build from a binary (N, C) matrix; ids default to row numbers."""
        dense = np.asarray(dense)
        if example_ids is None:
            example_ids = tuple(str(i) for i in range(dense.shape[0]))
        rows = tuple(np.flatnonzero(row).astype(np.int32) for row in dense)
        return cls(n_classes=dense.shape[1], positives=rows, example_ids=tuple(example_ids))

    @cached_property
    def dense(self) -> np.ndarray:
        """Binary (n_examples, n_classes) uint8 view of the labels."""
        out = np.zeros((self.n_examples, self.n_classes), dtype=np.uint8)
        for i, row in enumerate(self.positives):
            out[i, row] = 1
        return _freeze(out)

    @cached_property
    def positive_counts(self) -> np.ndarray:
        """Number of positive examples per class (int64, length n_classes)."""
        counts = np.zeros(self.n_classes, dtype=np.int64)
        for row in self.positives:
            counts[row] += 1
        return _freeze(counts)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic two-way partition of example indices."""

    seed: int
    fraction: float
    part_a: np.ndarray = field(repr=False)
    part_b: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = _freeze(np.asarray(self.part_a, dtype=np.int64))
        b = _freeze(np.asarray(self.part_b, dtype=np.int64))
        object.__setattr__(self, "part_a", a)
        object.__setattr__(self, "part_b", b)
        n = a.size + b.size
        union = np.union1d(a, b)
        if union.size != n or (n and (union[0] != 0 or union[-1] != n - 1)):
            raise FormatError("split parts must partition 0..n-1")


def split_examples(n_examples: int, seed: int, fraction: float = 0.5) -> SplitSpec:
    """Partition ``range(n_examples)`` into two sorted parts.

    ``|part_a| = round(fraction * n_examples)`` with round-half-up. The
    shuffle comes from the pinned PCG64 stream, so the same
    (seed, n_examples, fraction) always produces the same split on any
    platform.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    n_a = int(math.floor(fraction * n_examples + 0.5))
    perm = make_rng(seed, TAG_SPLIT).permutation(n_examples)
    part_a = np.sort(perm[:n_a])
    part_b = np.sort(perm[n_a:])
    return SplitSpec(seed=seed, fraction=fraction, part_a=part_a, part_b=part_b)


def require_aligned(a: Union[PredictionSet, LabelSet], b: Union[PredictionSet, LabelSet]) -> None:
    """Raise AlignmentError unless a and b cover identical examples in order."""
    if a.example_ids != b.example_ids:
        raise AlignmentError("example ids differ or are ordered differently")
    ca = a.n_classes if isinstance(a, (PredictionSet, LabelSet)) else None
    cb = b.n_classes
    if ca != cb:
        raise AlignmentError(f"class counts differ: {ca} vs {cb}")


def select_rows(data: Union[PredictionSet, LabelSet], idx) -> Union[PredictionSet, LabelSet]:
    """Row-subset by a sorted, strictly increasing index list."""
    idx = np.asarray(idx, dtype=np.int64)
    n = data.n_examples
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"index out of range for {n} examples")
    if idx.size > 1 and not np.all(np.diff(idx) > 0):
        raise ValueError("indices must be sorted and strictly increasing")
    ids = tuple(data.example_ids[i] for i in idx)
    if isinstance(data, PredictionSet):
        return PredictionSet(data.model_name, data.scores[idx], ids)
    return LabelSet(data.n_classes, tuple(data.positives[i] for i in idx), ids)
