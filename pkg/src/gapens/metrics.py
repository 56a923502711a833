"""Pooled top-k ranking metric and per-class accuracy analysis.

The headline metric pools each example's top-k scored classes into one
global list, sorts it by confidence, and computes average precision on
the pooled list. Tied confidences are averaged over orderings (see
kernels), which makes the value independent of example order and of the
platform's sort internals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import AlignmentError, LabelSet, PredictionSet, _freeze, require_aligned


def top_k_pool(p: PredictionSet, y: LabelSet, k: int):
    """Per-example top-k selection, pooled and sorted for AP.

    Selection ties are broken by ascending class index; the pooled list
    is ordered by descending score, then ascending example index, then
    ascending class index. Returns (scores, positives, example_idx,
    class_idx) arrays in pooled order.
    """
    require_aligned(p, y)
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = p.scores.astype(np.float64)
    n, c = scores.shape
    k = min(k, c)
    # stable argsort keeps ascending class order within equal scores
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    cols = top.ravel()
    pool_scores = scores[rows, cols]
    pool_pos = y.dense[rows, cols]
    order = np.lexsort((cols, rows, -pool_scores))
    return pool_scores[order], pool_pos[order], rows[order], cols[order]


def gap_at_k(p: PredictionSet, y: LabelSet, k: int = 20) -> float:
    """Global average precision of the pooled per-example top-k lists."""
    pool_scores, pool_pos, _, _ = top_k_pool(p, y, k)
    return _kernels.tie_averaged_ap(pool_scores, pool_pos)


def gap_from_arrays(scores: np.ndarray, dense_labels: np.ndarray, k: int = 20) -> float:
    """gap_at_k for raw arrays, with synthetic row-number example ids."""
    scores = np.asarray(scores)
    p = PredictionSet("scores", scores, tuple(str(i) for i in range(scores.shape[0])))
    return gap_at_k(p, LabelSet.from_dense(dense_labels), k)


@dataclass(frozen=True)
class OracleMatrix:
    """Binary correctness of one model's thresholded output per (example, class)."""

    model_name: str
    bits: np.ndarray

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or not np.all((bits == 0) | (bits == 1)):
            raise ValueError("oracle bits must be a 2-D 0/1 matrix")
        object.__setattr__(self, "bits", _freeze(bits))

    @property
    def n_examples(self) -> int:
        return self.bits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.bits.shape[1]


def oracle_matrix(p: PredictionSet, y: LabelSet, threshold: float = 0.5) -> OracleMatrix:
    """Compare thresholded scores against ground truth.

    A score >= threshold binarises to 1; the oracle bit is set when the
    binarised output equals the label.
    """
    require_aligned(p, y)
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    predicted = p.scores.astype(np.float64) >= threshold
    bits = (predicted == (y.dense != 0)).astype(np.uint8)
    return OracleMatrix(p.model_name, bits)


def class_accuracy(oracle: OracleMatrix, class_idx: int) -> float:
    """Fraction of examples the model got right for one class."""
    if not 0 <= class_idx < oracle.n_classes:
        raise IndexError(f"class {class_idx} out of range")
    return float(oracle.bits[:, class_idx].mean(dtype=np.float64))


def _check_same_dims(oracles: list[OracleMatrix]) -> None:
    shapes = {o.bits.shape for o in oracles}
    if len(shapes) != 1:
        raise AlignmentError(f"oracle dimensions differ: {sorted(shapes)}")


@dataclass(frozen=True)
class ClassAccuracyReport:
    """Per-class accuracies, their deviations from the mean, and the
    model-by-model deviation product matrix."""

    model_names: tuple[str, ...]
    class_indices: np.ndarray  # (K,)
    accuracy: np.ndarray  # (K, D)
    mean_accuracy: np.ndarray  # (K,)
    deviation: np.ndarray  # (K, D)
    deviation_matrix: np.ndarray  # (D, D)


def class_accuracy_report(
    oracles: list[OracleMatrix], classes=None
) -> ClassAccuracyReport:
    """Accuracy/deviation analysis across models.

    ``classes`` restricts the report (and the deviation matrix
    normalizer, which is the number of classes included) to a subset;
    default is all classes.
    """
    if len(oracles) < 2:
        raise ValueError("need at least 2 oracle matrices")
    _check_same_dims(oracles)
    if classes is None:
        classes = np.arange(oracles[0].n_classes, dtype=np.int64)
    else:
        classes = np.asarray(classes, dtype=np.int64)
    acc = np.stack(
        [o.bits[:, classes].mean(axis=0, dtype=np.float64) for o in oracles], axis=1
    )  # (K, D)
    mean_acc = acc.mean(axis=1)
    dev = acc - mean_acc[:, None]
    k = len(classes)
    dev_matrix = (dev.T @ dev) / k if k else np.zeros((len(oracles), len(oracles)))
    return ClassAccuracyReport(
        model_names=tuple(o.model_name for o in oracles),
        class_indices=_freeze(classes),
        accuracy=_freeze(acc),
        mean_accuracy=_freeze(mean_acc),
        deviation=_freeze(dev),
        deviation_matrix=_freeze(dev_matrix),
    )


def top_frequency_classes(y: LabelSet, m: int) -> np.ndarray:
    """The m most frequent classes, most frequent first, ties by index."""
    if m > y.n_classes:
        raise ValueError(f"m={m} exceeds n_classes={y.n_classes}")
    counts = y.positive_counts
    order = np.lexsort((np.arange(y.n_classes), -counts))
    return order[:m].astype(np.int64)
