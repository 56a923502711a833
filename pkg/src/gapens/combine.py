"""Ensembling: uniform averaging, correlation-seeded greedy merging with
quadratic fitting, and gradient-trained mixture-of-experts combiners.

All combiners produce a linear (or per-class linear) mix of the base
models' scores. Weights may be negative: the fitting procedures do not
constrain sign, and a model that hurts the ensemble legitimately ends up
with weight below zero. Combined scores are never clamped here because
the ranking metric only cares about order; clamping happens at export.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import AlignmentError, LabelSet, NumericError, PredictionSet, _freeze, require_aligned
from .core import SplitSpec, select_rows
from .metrics import gap_at_k
from .rng import TAG_MOE, make_rng

logger = logging.getLogger(__name__)

KINDS = ("average", "per_model", "per_model_class", "dual_stream")
DEFAULT_GRID = (0.2, 0.4, 0.6, 0.8)
CLAMP_EPS = 1e-6
_CONCAVITY_EPS = 1e-12


@dataclass(frozen=True)
class EnsembleWeights:
    """Combiner parameters; see module docstring for the four kinds."""

    kind: str
    model_names: tuple[str, ...]
    alpha: Optional[np.ndarray] = None
    residual: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weights kind {self.kind!r}")
        object.__setattr__(self, "model_names", tuple(self.model_names))
        d = len(self.model_names)
        alpha, residual = self.alpha, self.residual
        if self.kind == "average":
            if alpha is None:
                alpha = np.full(d, 1.0 / d)
            if residual is not None:
                raise ValueError("average weights carry no residual")
            if not np.allclose(alpha, 1.0 / d):
                raise ValueError("average weights must be uniform 1/D")
        if self.kind in ("average", "per_model", "dual_stream"):
            if alpha is None:
                raise ValueError(f"{self.kind} weights need alpha")
            alpha = np.asarray(alpha, dtype=np.float64)
            if alpha.shape != (d,) or not np.all(np.isfinite(alpha)):
                raise ValueError(f"alpha must be finite with shape ({d},)")
            object.__setattr__(self, "alpha", _freeze(alpha))
        else:
            object.__setattr__(self, "alpha", None)
        if self.kind in ("per_model_class", "dual_stream"):
            if residual is None:
                raise ValueError(f"{self.kind} weights need a per-(model, class) matrix")
            residual = np.asarray(residual, dtype=np.float64)
            if residual.ndim != 2 or residual.shape[0] != d or not np.all(np.isfinite(residual)):
                raise ValueError(f"residual must be finite with {d} rows")
            object.__setattr__(self, "residual", _freeze(residual))
        elif residual is not None:
            raise ValueError(f"{self.kind} weights carry no residual")

    @classmethod
    def uniform(cls, model_names: Sequence[str]) -> "EnsembleWeights":
        return cls(kind="average", model_names=tuple(model_names))


def save_weights(w: EnsembleWeights, path) -> None:
    doc = {
        "kind": w.kind,
        "model_names": list(w.model_names),
        "alpha": None if w.alpha is None else w.alpha.tolist(),
        "residual": None if w.residual is None else w.residual.tolist(),
        "metadata": w.metadata,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> EnsembleWeights:
    with open(path) as fh:
        doc = json.load(fh)
    return EnsembleWeights(
        kind=doc["kind"],
        model_names=tuple(doc["model_names"]),
        alpha=None if doc.get("alpha") is None else np.asarray(doc["alpha"]),
        residual=None if doc.get("residual") is None else np.asarray(doc["residual"]),
        metadata=doc.get("metadata", {}),
    )


def _require_all_aligned(preds: Sequence[PredictionSet]) -> None:
    if not preds:
        raise ValueError("need at least one prediction set")
    for p in preds[1:]:
        require_aligned(preds[0], p)


def _effective_class_weights(w: EnsembleWeights, n_classes: int) -> np.ndarray:
    """(D, C) matrix of per-(model, class) coefficients for any kind."""
    d = len(w.model_names)
    if w.kind in ("average", "per_model"):
        return np.repeat(w.alpha[:, None], n_classes, axis=1)
    if w.kind == "per_model_class":
        return w.residual
    return w.alpha[:, None] + w.residual


def _combine_scores(preds: Sequence[PredictionSet], w: EnsembleWeights) -> np.ndarray:
    """Weighted combination in float64, accumulated in model order."""
    n, c = preds[0].scores.shape
    out = np.zeros((n, c), dtype=np.float64)
    if w.kind in ("average", "per_model"):
        for coef, p in zip(w.alpha, preds):
            out += coef * p.scores.astype(np.float64)
    else:
        cw = _effective_class_weights(w, c)
        for coef_row, p in zip(cw, preds):
            out += coef_row[None, :] * p.scores.astype(np.float64)
    return out


def apply_weights(preds: Sequence[PredictionSet], w: EnsembleWeights) -> PredictionSet:
    """Materialize the weighted combination as a new prediction set."""
    _require_all_aligned(preds)
    if tuple(p.model_name for p in preds) != w.model_names:
        raise AlignmentError(
            f"model names {[p.model_name for p in preds]} do not match weights {list(w.model_names)}"
        )
    if w.residual is not None and w.residual.shape[1] != preds[0].n_classes:
        raise AlignmentError("residual class dimension does not match predictions")
    combined = _combine_scores(preds, w)
    return PredictionSet("ensemble", combined, preds[0].example_ids)


def average_combine(preds: Sequence[PredictionSet]) -> PredictionSet:
    """Elementwise mean of the base models (uniform 1/D weights)."""
    _require_all_aligned(preds)
    return apply_weights(preds, EnsembleWeights.uniform([p.model_name for p in preds]))


def pearson_correlation(a: PredictionSet, b: PredictionSet) -> Optional[float]:
    """Pearson r over the flattened score matrices.

    Returns None when either side has zero variance, where the
    correlation is undefined.
    """
    require_aligned(a, b)
    x = a.scores.astype(np.float64).ravel()
    y = b.scores.astype(np.float64).ravel()
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx @ dx) * (dy @ dy))
    if denom == 0.0:
        return None
    return float(np.clip((dx @ dy) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class PairFitDiagnostics:
    """Samples and quadratic coefficients behind a fitted pair weight."""

    grid: tuple[float, ...]
    gap_samples: tuple[float, ...]
    coefficients: tuple[float, float, float]  # a, b, c of a*w^2 + b*w + c
    fallback: bool  # True when the fit was not concave and the grid argmax was used


def _pair_gap_samples(sa, sb, y: LabelSet, grid, k: int) -> list[float]:
    pooled = []
    for w in grid:
        mixed = PredictionSet("pair", w * sa + (1.0 - w) * sb, y.example_ids)
        pooled.append(gap_at_k(mixed, y, k))
    return pooled


def fit_pair_weight(
    a: PredictionSet,
    b: PredictionSet,
    y: LabelSet,
    grid: Sequence[float] = DEFAULT_GRID,
    k: int = 20,
) -> tuple[float, PairFitDiagnostics]:
    """Fit the mixing weight for ``w*a + (1-w)*b`` by quadratic fit.

    The ranking metric is sampled at each grid weight and a least-squares
    quadratic is fitted. If the fit is concave the (clamped) vertex is
    returned; otherwise the best grid point wins, smallest weight on
    ties.
    """
    require_aligned(a, b)
    require_aligned(a, y)
    grid = tuple(sorted(float(w) for w in set(grid)))
    if len(grid) < 3 or grid[0] <= 0.0 or grid[-1] >= 1.0:
        raise ValueError("grid needs >= 3 distinct points strictly inside (0, 1)")
    sa = a.scores.astype(np.float64)
    sb = b.scores.astype(np.float64)
    gaps = _pair_gap_samples(sa, sb, y, grid, k)
    coeffs = np.polyfit(np.asarray(grid), np.asarray(gaps), 2)
    qa, qb, qc = (float(v) for v in coeffs)
    if qa < -_CONCAVITY_EPS:
        w_star = float(np.clip(-qb / (2.0 * qa), 0.0, 1.0))
        fallback = False
    else:
        w_star = grid[int(np.argmax(gaps))]
        fallback = True
    return w_star, PairFitDiagnostics(grid, tuple(gaps), (qa, qb, qc), fallback)


@dataclass(frozen=True)
class GreedyStep:
    """One merge of the running ensemble with a candidate model."""

    candidate: int
    candidate_name: str
    correlation: Optional[float]
    w_fit: float
    w_used: float
    guard_applied: bool
    diagnostics: PairFitDiagnostics
    gap_after: float


@dataclass(frozen=True)
class GreedyTrace:
    model_names: tuple[str, ...]
    order: tuple[int, ...]
    seed_pair: tuple[int, int]
    initial_correlations: np.ndarray  # (D, D), nan where undefined
    steps: tuple[GreedyStep, ...]
    final_gap: float


def _guarded_weight(sa, sb, y, grid, k, w_fit, diag) -> tuple[float, float, bool]:
    """Never accept a merge below the best sampled grid point."""
    best_idx = int(np.argmax(diag.gap_samples))
    best_grid_w = diag.grid[best_idx]
    best_grid_gap = diag.gap_samples[best_idx]
    if w_fit in diag.grid:
        gap_fit = diag.gap_samples[diag.grid.index(w_fit)]
    else:
        gap_fit = _pair_gap_samples(sa, sb, y, (w_fit,), k)[0]
    if gap_fit >= best_grid_gap:
        return w_fit, gap_fit, False
    return best_grid_w, best_grid_gap, True


def greedy_correlation_ensemble(
    preds: Sequence[PredictionSet],
    y: LabelSet,
    grid: Sequence[float] = DEFAULT_GRID,
    k: int = 20,
    max_models: Optional[int] = None,
) -> tuple[EnsembleWeights, GreedyTrace]:
    """Correlation-seeded greedy ensembling.

    Seeds with the least-correlated model pair, fits their mixing weight,
    then repeatedly correlates the running ensemble against the remaining
    models, merging the least-correlated candidate with a freshly fitted
    weight until all models are in (or ``max_models`` is reached). Final
    per-model weights are the accumulated products of the per-merge
    factors. Models left out by early termination get weight zero.
    """
    _require_all_aligned(preds)
    require_aligned(preds[0], y)
    d = len(preds)
    if d < 2:
        raise ValueError("greedy ensembling needs at least 2 models")
    if max_models is not None and max_models < 2:
        raise ValueError("max_models must be >= 2")
    limit = d if max_models is None else min(max_models, d)
    names = tuple(p.model_name for p in preds)
    mats = [p.scores.astype(np.float64) for p in preds]

    corr = np.full((d, d), np.nan)
    best = None
    for i in range(d):
        for j in range(i + 1, d):
            r = pearson_correlation(preds[i], preds[j])
            if r is not None:
                corr[i, j] = corr[j, i] = r
                if best is None or r < best[0]:
                    best = (r, i, j)
    if best is None:
        raise NumericError("all pairwise correlations undefined (constant models)")
    _, si, sj = best

    def accumulate(coefs: np.ndarray) -> np.ndarray:
        # same accumulation order as apply_weights, so the running
        # ensemble matches the final materialization bit for bit
        out = np.zeros_like(mats[0])
        for coef, mat in zip(coefs, mats):
            out += coef * mat
        return out

    alpha = np.zeros(d)
    w_fit, diag = fit_pair_weight(preds[si], preds[sj], y, grid, k)
    w_used, _, guard = _guarded_weight(mats[si], mats[sj], y, grid, k, w_fit, diag)
    alpha[si], alpha[sj] = w_used, 1.0 - w_used
    ensemble = accumulate(alpha)
    gap_now = gap_at_k(PredictionSet("ensemble", ensemble, y.example_ids), y, k)
    order = [si, sj]
    steps = [GreedyStep(sj, names[sj], best[0], w_fit, w_used, guard, diag, gap_now)]

    remaining = [m for m in range(d) if m not in (si, sj)]
    while remaining and len(order) < limit:
        ens_pred = PredictionSet("ensemble", ensemble, y.example_ids)
        ens_mat = ens_pred.scores.astype(np.float64)
        cand_corr = []
        for m in remaining:
            r = pearson_correlation(ens_pred, preds[m])
            cand_corr.append((r is None, r if r is not None else 0.0, m, r))
        # defined correlations first, lowest value, then lowest index
        cand_corr.sort(key=lambda t: t[:3])
        _, _, chosen, r_chosen = cand_corr[0]
        w_fit, diag = fit_pair_weight(ens_pred, preds[chosen], y, grid, k)
        w_used, _, guard = _guarded_weight(ens_mat, mats[chosen], y, grid, k, w_fit, diag)
        if guard:
            logger.debug("merge of %s fell back to grid weight %.2f", names[chosen], w_used)
        alpha *= w_used
        alpha[chosen] = 1.0 - w_used
        ensemble = accumulate(alpha)
        gap_now = gap_at_k(PredictionSet("ensemble", ensemble, y.example_ids), y, k)
        order.append(chosen)
        remaining.remove(chosen)
        steps.append(
            GreedyStep(chosen, names[chosen], r_chosen, w_fit, w_used, guard, diag, gap_now)
        )

    weights = EnsembleWeights(kind="per_model", model_names=names, alpha=alpha)
    final_gap = gap_at_k(apply_weights(preds, weights), y, k)
    trace = GreedyTrace(
        model_names=names,
        order=tuple(order),
        seed_pair=(si, sj),
        initial_correlations=_freeze(corr),
        steps=tuple(steps),
        final_gap=final_gap,
    )
    return weights, trace


# --- Adam -----------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam accumulators, shaped like the parameters."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray], lr: float = 1e-3, **kw) -> "AdamState":
        zeros = {k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()}
        return cls(step=0, m=zeros, v={k: z.copy() for k, z in zeros.items()}, lr=lr, **kw)


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> tuple[AdamState, dict[str, np.ndarray]]:
    """One bias-corrected Adam update; returns new state and parameters."""
    t = state.step + 1
    new_m, new_v, new_params = {}, {}, {}
    for key, p in params.items():
        g = np.asarray(grads[key], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {key!r} at step {t}")
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_m[key], new_v[key] = m, v
        new_params[key] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    next_state = AdamState(
        step=t, m=new_m, v=new_v, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return next_state, new_params


# --- Mixture-of-experts fitting --------------------------------------------


@dataclass(frozen=True)
class MoeHyperparams:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 1024
    l2: float = 1e-3  # residual-stream penalty, dual_stream only
    k: int = 20

    def as_dict(self) -> dict:
        return {
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "l2": self.l2,
            "k": self.k,
        }


@dataclass(frozen=True)
class FitReport:
    """Per-epoch training trajectory of a gradient-fitted combiner."""

    kind: str
    model_names: tuple[str, ...]
    epochs: tuple[int, ...]
    train_gap: tuple[float, ...]
    heldout_gap: tuple[float, ...]
    train_loss: tuple[float, ...]
    weight_snapshots: np.ndarray  # (epochs, D) per-model weights or row means
    final_weights: EnsembleWeights
    hyperparameters: dict
    seed: int


def _params_to_weights(kind, names, params, metadata=None) -> EnsembleWeights:
    metadata = metadata or {}
    if kind == "per_model":
        return EnsembleWeights("per_model", names, alpha=params["alpha"], metadata=metadata)
    if kind == "per_model_class":
        return EnsembleWeights(
            "per_model_class", names, residual=params["weights"], metadata=metadata
        )
    return EnsembleWeights(
        "dual_stream", names, alpha=params["alpha"], residual=params["residual"], metadata=metadata
    )


def _snapshot(kind, params) -> np.ndarray:
    if kind == "per_model":
        return params["alpha"].copy()
    if kind == "per_model_class":
        return params["weights"].mean(axis=1)
    return params["alpha"].copy()


def _clamped_bce(z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    zt = np.clip(z, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return -(labels * np.log(zt) + (1.0 - labels) * np.log1p(-zt))


def ensemble_cross_entropy(
    preds: Sequence[PredictionSet], y: LabelSet, w: EnsembleWeights, l2: float = 0.0
) -> float:
    """Mean clamped binary cross-entropy of the combined scores, plus the
    residual penalty when requested."""
    _require_all_aligned(preds)
    require_aligned(preds[0], y)
    z = _combine_scores(preds, w)
    loss = float(_clamped_bce(z, y.dense.astype(np.float64)).mean())
    if l2 and w.residual is not None:
        loss += l2 * float((w.residual**2).sum())
    return loss


def moe_fit(
    preds: Sequence[PredictionSet],
    y: LabelSet,
    kind: str,
    hp: MoeHyperparams,
    split: SplitSpec,
    seed: int,
) -> FitReport:
    """Fit a mixture-of-experts combiner by Adam on clamped cross-entropy.

    The combined score is a linear function of the parameters, so the
    gradients are closed-form; the clamp that keeps the loss finite is
    treated as the identity in the backward pass (a hard clamp would
    freeze the zero-initialized matrix kinds). Fitting uses the first
    split part; the ranking metric is logged on both parts every epoch.
    """
    if kind not in ("per_model", "per_model_class", "dual_stream"):
        raise ValueError(f"unknown MoE kind {kind!r}")
    _require_all_aligned(preds)
    require_aligned(preds[0], y)
    n, c = preds[0].scores.shape
    if split.part_a.size + split.part_b.size != n:
        raise ValueError("split does not cover the example set")
    if split.part_a.size == 0 or split.part_b.size == 0:
        raise ValueError("empty split part")
    d = len(preds)
    names = tuple(p.model_name for p in preds)

    train_idx = split.part_a
    s_train = np.stack([p.scores[train_idx] for p in preds])  # (D, Na, C) f32
    y_train = y.dense[train_idx].astype(np.float64)
    preds_a = [select_rows(p, split.part_a) for p in preds]
    preds_b = [select_rows(p, split.part_b) for p in preds]
    y_a = select_rows(y, split.part_a)
    y_b = select_rows(y, split.part_b)

    if kind == "per_model":
        params = {"alpha": np.full(d, 1.0 / d)}
    elif kind == "per_model_class":
        params = {"weights": np.zeros((d, c))}
    else:
        params = {"alpha": np.full(d, 1.0 / d), "residual": np.zeros((d, c))}
    state = AdamState.init(params, lr=hp.lr)
    rng = make_rng(seed, TAG_MOE)
    n_train = train_idx.size
    batch = min(hp.batch_size, n_train)

    def combine_batch(s64: np.ndarray) -> np.ndarray:
        if kind == "per_model":
            return np.einsum("i,inc->nc", params["alpha"], s64)
        if kind == "per_model_class":
            return np.einsum("ic,inc->nc", params["weights"], s64)
        return np.einsum("ic,inc->nc", params["alpha"][:, None] + params["residual"], s64)

    def full_train_loss() -> float:
        total = 0.0
        for start in range(0, n_train, 4096):
            s64 = s_train[:, start : start + 4096].astype(np.float64)
            z = combine_batch(s64)
            total += float(_clamped_bce(z, y_train[start : start + 4096]).sum())
        loss = total / (n_train * c)
        if kind == "dual_stream":
            loss += hp.l2 * float((params["residual"] ** 2).sum())
        return loss

    epochs_log, gap_a_log, gap_b_log, loss_log, snaps = [], [], [], [], []
    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(n_train)
        for start in range(0, n_train, batch):
            bidx = perm[start : start + batch]
            s64 = s_train[:, bidx].astype(np.float64)
            yb = y_train[bidx]
            z = combine_batch(s64)
            zt = np.clip(z, CLAMP_EPS, 1.0 - CLAMP_EPS)
            g = (zt - yb) / (zt * (1.0 - zt)) / (bidx.size * c)
            if kind == "per_model":
                grads = {"alpha": np.einsum("nc,inc->i", g, s64)}
            elif kind == "per_model_class":
                grads = {"weights": np.einsum("nc,inc->ic", g, s64)}
            else:
                g_w = np.einsum("nc,inc->ic", g, s64)
                grads = {
                    "alpha": g_w.sum(axis=1),
                    "residual": g_w + 2.0 * hp.l2 * params["residual"],
                }
            state, params = adam_step(state, params, grads)
        loss = full_train_loss()
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        w_now = _params_to_weights(kind, names, params)
        epochs_log.append(epoch)
        loss_log.append(loss)
        gap_a_log.append(gap_at_k(apply_weights(preds_a, w_now), y_a, hp.k))
        gap_b_log.append(gap_at_k(apply_weights(preds_b, w_now), y_b, hp.k))
        snaps.append(_snapshot(kind, params))

    final = _params_to_weights(
        kind, names, params, metadata={"seed": seed, "hyperparameters": hp.as_dict()}
    )
    return FitReport(
        kind=kind,
        model_names=names,
        epochs=tuple(epochs_log),
        train_gap=tuple(gap_a_log),
        heldout_gap=tuple(gap_b_log),
        train_loss=tuple(loss_log),
        weight_snapshots=_freeze(np.asarray(snaps)),
        final_weights=final,
        hyperparameters=hp.as_dict(),
        seed=seed,
    )
