"""Synthetic multi-label benchmark with skewed class frequencies and a
family of controllably diverse base predictors.

Ground truth is generative: each class owns a unit prototype direction;
an example mixes 1..max_labels prototypes (chosen under a Zipf-like
frequency skew) into a noisy frame sequence, and its labels are the
mixed classes. Family members are small gated residual nets trained on
distinct random feature subsets and label-noise realizations, which
manufactures the negative per-class correlations that make ensembling
worthwhile. Everything is a pure function of the spec seed.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .core import LabelSet, NumericError, PredictionSet, split_examples
from .nets import NetTrainConfig, ToyNetConfig, aggregate_dataset, fcrn_train, predict_scores
from .rng import TAG_DATASET, TAG_FAMILY, make_rng


@dataclass(frozen=True)
class FamilySpec:
    """How to build the predictor family."""

    count: int = 6
    feature_fraction: float = 0.6
    label_noise: float = 0.1
    hidden_dim: int = 64
    n_resnet_blocks: int = 1
    dropout_rate: float = 0.1
    epochs: int = 12
    lr: float = 1e-2
    batch_size: int = 256
    max_correlation: float = 0.98
    overrides: tuple[dict, ...] = ()


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_examples: int = 2000
    n_classes: int = 100
    feature_dim: int = 32
    n_frames: tuple[int, int] = (4, 12)
    skew: float = 1.2
    label_noise: float = 0.0
    noise_scale: float = 0.3
    max_labels: int = 4
    heldout_fraction: float = 0.5
    family: FamilySpec = field(default_factory=FamilySpec)

    def __post_init__(self):
        if self.n_examples < 1 or self.n_classes < 1 or self.feature_dim < 1:
            raise ValueError("counts must be positive")
        lo, hi = self.n_frames
        if not 1 <= lo <= hi:
            raise ValueError("n_frames range must satisfy 1 <= lo <= hi")
        if self.skew < 0.0:
            raise ValueError("skew exponent must be >= 0")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label noise rate must be in [0, 1)")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise ValueError("heldout fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["n_frames"] = list(self.n_frames)
        doc["family"]["overrides"] = [dict(o) for o in self.family.overrides]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthSpec":
        doc = dict(doc)
        fam = dict(doc.pop("family", {}))
        fam["overrides"] = tuple(dict(o) for o in fam.get("overrides", ()))
        doc["n_frames"] = tuple(doc.get("n_frames", (4, 12)))
        return cls(family=FamilySpec(**fam), **doc)


@dataclass(frozen=True)
class SynthDataset:
    frames: tuple[np.ndarray, ...]
    labels: LabelSet

    @cached_property
    def features(self) -> np.ndarray:
        """(N, 2F) aggregated mean+std features for every example."""
        return aggregate_dataset(self.frames)


def _class_probabilities(n_classes: int, skew: float) -> np.ndarray:
    weights = (np.arange(1, n_classes + 1, dtype=np.float64)) ** (-skew)
    return weights / weights.sum()


def _apply_label_noise(dense: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Replace each positive with a random other class with probability
    ``rate``; replacements landing on an existing positive are dropped."""
    if rate == 0.0:
        return dense
    noisy = dense.copy()
    n, c = dense.shape
    for i in range(n):
        for cls in np.flatnonzero(dense[i]):
            if rng.random() < rate:
                new_cls = int(rng.integers(c))
                noisy[i, cls] = 0
                if not dense[i, new_cls]:
                    noisy[i, new_cls] = 1
    return noisy


def gen_dataset(spec: SynthSpec) -> SynthDataset:
    """Sample frames and labels; bit-identical for a fixed spec."""
    rng = make_rng(spec.seed, TAG_DATASET)
    c, f = spec.n_classes, spec.feature_dim
    prototypes = rng.normal(size=(c, f))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    probs = _class_probabilities(c, spec.skew)
    lo, hi = spec.n_frames
    frames: list[np.ndarray] = []
    dense = np.zeros((spec.n_examples, c), dtype=np.uint8)
    for i in range(spec.n_examples):
        m = int(rng.integers(1, spec.max_labels + 1))
        classes = rng.choice(c, size=m, replace=False, p=probs)
        mix = rng.dirichlet(np.ones(m)) @ prototypes[classes]
        t = int(rng.integers(lo, hi + 1))
        frames.append(mix + spec.noise_scale * rng.normal(size=(t, f)))
        dense[i, classes] = 1
    if spec.label_noise:
        dense = _apply_label_noise(dense, spec.label_noise, rng)
    ids = tuple(f"ex{i:06d}" for i in range(spec.n_examples))
    return SynthDataset(frames=tuple(frames), labels=LabelSet.from_dense(dense, ids))


@dataclass(frozen=True)
class PredictorFamily:
    predictions: tuple[PredictionSet, ...]
    labels: LabelSet  # held-out examples, aligned with every prediction set
    heldout_indices: np.ndarray
    correlations: np.ndarray
    attempts: int
    feature_subsets: tuple[np.ndarray, ...]


def _member_spec(family: FamilySpec, i: int) -> FamilySpec:
    if i < len(family.overrides) and family.overrides[i]:
        return replace(family, **family.overrides[i])
    return family


def gen_predictor_family(spec: SynthSpec, dataset: SynthDataset) -> PredictorFamily:
    """Train the family and predict the held-out part of the dataset.

    The family is accepted once its maximum pairwise correlation falls
    below the spec threshold; otherwise the whole family is regenerated
    with an incremented sub-seed, up to 10 attempts.
    """
    from .combine import pearson_correlation  # local import to avoid a cycle

    features = dataset.features
    n, total_dims = features.shape
    split = split_examples(n, spec.seed, 1.0 - spec.heldout_fraction)
    train_idx, held_idx = split.part_a, split.part_b
    x_train, x_held = features[train_idx], features[held_idx]
    y_train = dataset.labels.dense[train_idx]
    held_ids = tuple(dataset.labels.example_ids[i] for i in held_idx)
    held_labels = LabelSet.from_dense(dataset.labels.dense[held_idx], held_ids)

    last_max_corr: Optional[float] = None
    for attempt in range(10):
        members: list[PredictionSet] = []
        subsets: list[np.ndarray] = []
        for i in range(spec.family.count):
            member = _member_spec(spec.family, i)
            rng = make_rng(spec.seed, TAG_FAMILY, attempt, i)
            n_feat = max(1, int(round(member.feature_fraction * total_dims)))
            subset = np.sort(rng.choice(total_dims, size=n_feat, replace=False))
            noisy = _apply_label_noise(y_train, member.label_noise, rng)
            cfg = ToyNetConfig(
                input_dim=n_feat,
                hidden_dims=(member.hidden_dim,),
                n_resnet_blocks=member.n_resnet_blocks,
                dropout_rate=member.dropout_rate,
                n_classes=spec.n_classes,
                use_gated_output=True,
                seed=int(rng.integers(np.iinfo(np.int64).max)),
            )
            train_seed = int(rng.integers(np.iinfo(np.int64).max))
            hp = NetTrainConfig(lr=member.lr, epochs=member.epochs, batch_size=member.batch_size)
            params, _ = fcrn_train(cfg, (x_train[:, subset], noisy), hp, seed=train_seed)
            scores = predict_scores(cfg, params, x_held[:, subset])
            members.append(PredictionSet(f"member{i:02d}", scores, held_ids))
            subsets.append(subset)
        d = len(members)
        corr = np.eye(d)
        max_corr = -np.inf
        for a in range(d):
            for b in range(a + 1, d):
                r = pearson_correlation(members[a], members[b])
                corr[a, b] = corr[b, a] = np.nan if r is None else r
                if r is not None:
                    max_corr = max(max_corr, r)
        last_max_corr = max_corr
        if max_corr < spec.family.max_correlation:
            return PredictorFamily(
                predictions=tuple(members),
                labels=held_labels,
                heldout_indices=held_idx,
                correlations=corr,
                attempts=attempt + 1,
                feature_subsets=tuple(subsets),
            )
    raise NumericError(
        f"family diversity threshold {spec.family.max_correlation} unattainable in 10 attempts"
        f" (last max correlation {last_max_corr})"
    )
