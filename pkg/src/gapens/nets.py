"""Toy-scale gated residual classifier: frame aggregation features, a
fully connected input layer, residual blocks with inverted dropout, an
optional gating output layer, and exact backpropagation.

The residual block computes ``y = C2 (mask * relu(C1 x)) + x``; with
zero block weights it is exactly the identity. The gate layer computes
``x * sigmoid(W x + b)`` with as many gate units as inputs. Training
minimizes per-class binary cross-entropy on sigmoid outputs via the
shared Adam step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .combine import AdamState, adam_step
from .core import NumericError
from .metrics import gap_from_arrays
from .rng import TAG_NET_INIT, TAG_NET_TRAIN, make_rng


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    return v / norm if norm > 0.0 else v


@dataclass(frozen=True)
class FeatureVector:
    """L2-normalized mean and standard-deviation parts, concatenated."""

    mean: np.ndarray
    std: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.mean, self.std])


def aggregate_mean_std(frames: np.ndarray) -> FeatureVector:
    """Aggregate a (T, F) frame matrix into a single feature vector.

    Column means and population standard deviations (divisor T, so a
    single frame yields a zero std part) are each L2-normalized and
    concatenated. A zero vector normalizes to itself.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] < 1:
        raise ValueError("frames must be a non-empty (T, F) matrix")
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)  # population divisor
    return FeatureVector(mean=_l2_normalize(mean), std=_l2_normalize(std))


def aggregate_dataset(frame_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Stack aggregated features for many examples into an (N, 2F) matrix."""
    return np.stack([aggregate_mean_std(f).vector for f in frame_sets])


def gated_layer_forward(x: np.ndarray, w_gate: np.ndarray, b_gate=None) -> np.ndarray:
    """Elementwise product of the input with its learned sigmoid gate."""
    x = np.asarray(x, dtype=np.float64)
    if w_gate.shape != (x.shape[-1], x.shape[-1]):
        raise ValueError("gate weights must be square with the input dimension")
    pre = x @ w_gate.T
    if b_gate is not None:
        pre = pre + b_gate
    return x * sigmoid(pre)


def resnet_block_forward(x, c1, c2, dropout_mask) -> np.ndarray:
    """One residual block: ``c2 @ (mask * relu(c1 @ x)) + x``.

    ``dropout_mask`` entries are 0 or 1/(1-p) (inverted dropout); pass
    ones for inference.
    """
    x = np.asarray(x, dtype=np.float64)
    if c1.shape[1] != x.shape[-1] or c2.shape != (x.shape[-1], c1.shape[0]):
        raise ValueError("block weight shapes do not allow the skip sum")
    hidden = dropout_mask * np.maximum(x @ c1.T, 0.0)
    return hidden @ c2.T + x


@dataclass(frozen=True)
class ToyNetConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    n_resnet_blocks: int
    dropout_rate: float
    n_classes: int
    use_gated_output: bool = True
    gate_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.n_classes < 1 or not self.hidden_dims:
            raise ValueError("dimensions must be positive")
        if any(h < 1 for h in self.hidden_dims) or self.n_resnet_blocks < 0:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")

    @property
    def width(self) -> int:
        """Dimension flowing through the blocks (output of the input FC)."""
        return self.hidden_dims[0]

    @property
    def block_hidden(self) -> int:
        return self.hidden_dims[1] if len(self.hidden_dims) > 1 else self.hidden_dims[0]


@dataclass
class ToyNetParams:
    w_in: np.ndarray  # (width, input_dim)
    blocks: list[tuple[np.ndarray, np.ndarray]]  # (c1: (h, width), c2: (width, h))
    w_gate: Optional[np.ndarray]  # (width, width)
    b_gate: Optional[np.ndarray]  # (width,)
    w_out: np.ndarray  # (n_classes, width)
    b_out: np.ndarray  # (n_classes,)

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {"w_in": self.w_in}
        for i, (c1, c2) in enumerate(self.blocks):
            out[f"c1_{i}"] = c1
            out[f"c2_{i}"] = c2
        if self.w_gate is not None:
            out["w_gate"] = self.w_gate
        if self.b_gate is not None:
            out["b_gate"] = self.b_gate
        out["w_out"] = self.w_out
        out["b_out"] = self.b_out
        return out

    @classmethod
    def from_dict(cls, cfg: ToyNetConfig, d: dict[str, np.ndarray]) -> "ToyNetParams":
        return cls(
            w_in=d["w_in"],
            blocks=[(d[f"c1_{i}"], d[f"c2_{i}"]) for i in range(cfg.n_resnet_blocks)],
            w_gate=d.get("w_gate"),
            b_gate=d.get("b_gate"),
            w_out=d["w_out"],
            b_out=d["b_out"],
        )


def _he_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(6.0 / shape[1])
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ToyNetConfig) -> ToyNetParams:
    """He-style fan-in scaled uniform weights, zero biases, from the
    pinned generator. Draw order is fixed by the architecture."""
    rng = make_rng(cfg.seed, TAG_NET_INIT)
    d, h = cfg.width, cfg.block_hidden
    w_in = _he_uniform(rng, (d, cfg.input_dim))
    blocks = [
        (_he_uniform(rng, (h, d)), _he_uniform(rng, (d, h)))
        for _ in range(cfg.n_resnet_blocks)
    ]
    w_gate = b_gate = None
    if cfg.use_gated_output:
        w_gate = _he_uniform(rng, (d, d))
        if cfg.gate_bias:
            b_gate = np.zeros(d)
    w_out = _he_uniform(rng, (cfg.n_classes, d))
    b_out = np.zeros(cfg.n_classes)
    return ToyNetParams(w_in, blocks, w_gate, b_gate, w_out, b_out)


def sample_masks(
    cfg: ToyNetConfig, rng: np.random.Generator, batch_size: int
) -> list[np.ndarray]:
    """Per-block inverted-dropout masks with entries 0 or 1/(1-p)."""
    if cfg.dropout_rate == 0.0:
        return [np.ones((batch_size, cfg.block_hidden)) for _ in range(cfg.n_resnet_blocks)]
    keep = 1.0 - cfg.dropout_rate
    return [
        (rng.random((batch_size, cfg.block_hidden)) < keep) / keep
        for _ in range(cfg.n_resnet_blocks)
    ]


def _forward(cfg, params: ToyNetParams, x: np.ndarray, masks=None):
    """Batch forward pass; returns (logits, cache). ``masks=None`` means
    inference (no dropout scaling is needed under inverted dropout)."""
    a = np.maximum(x @ params.w_in.T, 0.0)
    a_in_stack, u_stack, rd_stack = [], [], []
    for i, (c1, c2) in enumerate(params.blocks):
        a_in_stack.append(a)
        u = a @ c1.T
        r = np.maximum(u, 0.0)
        rd = r if masks is None else masks[i] * r
        u_stack.append(u)
        rd_stack.append(rd)
        a = rd @ c2.T + a
    gate = None
    pre_gate_input = a
    if cfg.use_gated_output:
        pre = a @ params.w_gate.T
        if params.b_gate is not None:
            pre = pre + params.b_gate
        gate = sigmoid(pre)
        a = a * gate
    logits = a @ params.w_out.T + params.b_out
    cache = (x, a_in_stack, u_stack, rd_stack, pre_gate_input, gate, a)
    return logits, cache


def _bce_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    # softplus(z) - y*z, numerically stable
    per = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits))) - labels * logits
    return float(per.mean())


def _backward(cfg, params: ToyNetParams, cache, logits, labels, masks=None):
    """Exact gradients of the mean BCE loss w.r.t. every parameter."""
    x, a_in_stack, u_stack, rd_stack, gate_in, gate, h_out = cache
    b, c = logits.shape
    dz = (sigmoid(logits) - labels) / (b * c)
    grads = {"w_out": dz.T @ h_out, "b_out": dz.sum(axis=0)}
    da = dz @ params.w_out
    if cfg.use_gated_output:
        dgate = da * gate_in
        da = da * gate
        dpre = dgate * gate * (1.0 - gate)
        grads["w_gate"] = dpre.T @ gate_in
        if params.b_gate is not None:
            grads["b_gate"] = dpre.sum(axis=0)
        da = da + dpre @ params.w_gate
    for i in reversed(range(len(params.blocks))):
        c1, c2 = params.blocks[i]
        grads[f"c2_{i}"] = da.T @ rd_stack[i]
        drd = da @ c2
        dr = drd if masks is None else masks[i] * drd
        du = dr * (u_stack[i] > 0.0)
        grads[f"c1_{i}"] = du.T @ a_in_stack[i]
        da = da + du @ c1
    dpre_in = da * (a_in_stack[0] > 0.0) if params.blocks else da * ((x @ params.w_in.T) > 0.0)
    grads["w_in"] = dpre_in.T @ x
    return grads


def fcrn_forward(cfg: ToyNetConfig, params: ToyNetParams, features, mode: str = "infer", rng=None):
    """Per-class sigmoid scores for one feature vector.

    Inference ignores ``rng`` entirely; training mode samples dropout
    masks from it.
    """
    x = features.vector if isinstance(features, FeatureVector) else np.asarray(features, float)
    x = np.atleast_2d(x)
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim} input dims, got {x.shape[1]}")
    if mode == "infer":
        masks = None
    elif mode == "train":
        if rng is None and cfg.dropout_rate > 0.0:
            raise ValueError("training mode with dropout needs an rng")
        masks = sample_masks(cfg, rng, x.shape[0]) if cfg.dropout_rate > 0.0 else None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    logits, _ = _forward(cfg, params, x, masks)
    return sigmoid(logits)[0]


def predict_scores(cfg: ToyNetConfig, params: ToyNetParams, features: np.ndarray) -> np.ndarray:
    """Inference scores for a whole (N, input_dim) feature matrix."""
    logits, _ = _forward(cfg, params, np.asarray(features, dtype=np.float64))
    return sigmoid(logits)


@dataclass(frozen=True)
class NetTrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    log_gap: bool = False
    gap_k: int = 20


@dataclass(frozen=True)
class TrainLog:
    epochs: tuple[int, ...]
    loss: tuple[float, ...]
    train_gap: tuple[float, ...]
    heldout_gap: tuple[float, ...]


def _as_matrices(data):
    if isinstance(data, tuple) and len(data) == 2:
        x, labels = data
        return np.asarray(x, dtype=np.float64), np.asarray(labels, dtype=np.float64)
    x = np.stack([fv.vector if isinstance(fv, FeatureVector) else fv for fv, _ in data])
    labels = np.stack([lab for _, lab in data]).astype(np.float64)
    return x, labels


def fcrn_train(
    cfg: ToyNetConfig,
    data,
    hp: NetTrainConfig,
    seed: int,
    heldout=None,
) -> tuple[ToyNetParams, TrainLog]:
    """Train the toy net with Adam; deterministic for a fixed seed.

    ``data`` is either an (X, Y) pair of matrices or a list of
    (FeatureVector, label-vector) pairs. The logged loss is evaluated on
    the full training set in inference mode after each epoch.
    """
    x, labels = _as_matrices(data)
    if x.shape[0] == 0:
        raise ValueError("empty training data")
    params = init_params(cfg)
    pdict = params.to_dict()
    state = AdamState.init(pdict, lr=hp.lr)
    rng = make_rng(seed, TAG_NET_TRAIN)
    n = x.shape[0]
    batch = min(hp.batch_size, n)
    x_held = y_held = None
    if heldout is not None:
        x_held, y_held = _as_matrices(heldout)

    epochs_log, loss_log, gap_log, held_log = [], [], [], []
    for epoch in range(1, hp.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, batch):
            bidx = perm[start : start + batch]
            xb, yb = x[bidx], labels[bidx]
            masks = sample_masks(cfg, rng, xb.shape[0]) if cfg.dropout_rate > 0.0 else None
            logits, cache = _forward(cfg, params, xb, masks)
            grads = _backward(cfg, params, cache, logits, yb, masks)
            state, pdict = adam_step(state, pdict, grads)
            params = ToyNetParams.from_dict(cfg, pdict)
        logits, _ = _forward(cfg, params, x)
        loss = _bce_from_logits(logits, labels)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at epoch {epoch}")
        epochs_log.append(epoch)
        loss_log.append(loss)
        if hp.log_gap:
            gap_log.append(gap_from_arrays(sigmoid(logits), labels, hp.gap_k))
            if x_held is not None:
                held_log.append(
                    gap_from_arrays(predict_scores(cfg, params, x_held), y_held, hp.gap_k)
                )
            else:
                held_log.append(float("nan"))
        else:
            gap_log.append(float("nan"))
            held_log.append(float("nan"))
    log = TrainLog(tuple(epochs_log), tuple(loss_log), tuple(gap_log), tuple(held_log))
    return params, log


def save_toynet(cfg: ToyNetConfig, params: ToyNetParams, path) -> None:
    """Serialize config and weights in the tensor container (f32 payload)."""
    from .io import write_tensor

    pdict = params.to_dict()
    order = sorted(pdict)
    manifest = {
        "dtype": "f32",
        "kind": "toynet-params",
        "config": {
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "n_resnet_blocks": cfg.n_resnet_blocks,
            "dropout_rate": cfg.dropout_rate,
            "n_classes": cfg.n_classes,
            "use_gated_output": cfg.use_gated_output,
            "gate_bias": cfg.gate_bias,
            "seed": cfg.seed,
        },
        "arrays": {k: list(pdict[k].shape) for k in order},
    }
    payload = np.concatenate([pdict[k].ravel() for k in order]) if order else np.empty(0)
    write_tensor(path, manifest, [], payload.astype(np.float32))


def load_toynet(path) -> tuple[ToyNetConfig, ToyNetParams]:
    from .core import FormatError
    from .io import read_tensor

    manifest, _, payload = read_tensor(path)
    if manifest.get("kind") != "toynet-params":
        raise FormatError(f"{path}: container kind {manifest.get('kind')!r} is not toynet-params")
    cfg_doc = dict(manifest["config"])
    cfg_doc["hidden_dims"] = tuple(cfg_doc["hidden_dims"])
    cfg = ToyNetConfig(**cfg_doc)
    pdict = {}
    offset = 0
    for key in sorted(manifest["arrays"]):
        shape = tuple(manifest["arrays"][key])
        size = int(np.prod(shape)) if shape else 1
        pdict[key] = payload[offset : offset + size].astype(np.float64).reshape(shape)
        offset += size
    if offset != payload.size:
        raise FormatError(f"{path}: payload size mismatch for declared arrays")
    return cfg, ToyNetParams.from_dict(cfg, pdict)


def grad_check(cfg: ToyNetConfig, params: ToyNetParams, batch, masks=None, rel_floor: float = 1e-8):
    """Max per-parameter relative error between analytic and
    central-difference gradients (step 1e-5, float64).

    Each parameter tensor is differenced entry by entry and compared by
    L2 norm: ``||analytic - numeric|| / max(||analytic||, ||numeric||,
    rel_floor)``; the max over parameters is returned. The norm-based
    ratio keeps difference roundoff on near-zero entries from swamping
    the comparison. Set ``rel_floor=1.0`` to read the result as an
    absolute error (the near-converged regime, where every gradient is
    tiny). Requires dropout disabled or explicitly frozen masks; an
    unfrozen stochastic forward pass cannot be differenced.
    """
    if cfg.dropout_rate > 0.0 and masks is None:
        raise ValueError("grad_check needs dropout disabled or frozen masks")
    x, labels = _as_matrices(batch)
    logits, cache = _forward(cfg, params, x, masks)
    grads = _backward(cfg, params, cache, logits, labels, masks)
    pdict = params.to_dict()
    step = 1e-5

    def loss_at(d: dict[str, np.ndarray]) -> float:
        p = ToyNetParams.from_dict(cfg, d)
        lg, _ = _forward(cfg, p, x, masks)
        return _bce_from_logits(lg, labels)

    worst = 0.0
    for key, value in pdict.items():
        flat = value.reshape(-1)
        num = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at(pdict)
            flat[i] = orig - step
            down = loss_at(pdict)
            flat[i] = orig
            num[i] = (up - down) / (2.0 * step)
        ana = grads[key].reshape(-1)
        gap = float(np.linalg.norm(ana - num))
        denom = max(float(np.linalg.norm(ana)), float(np.linalg.norm(num)), rel_floor)
        worst = max(worst, gap / denom)
    return worst
