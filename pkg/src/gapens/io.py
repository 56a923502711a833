"""File formats: binary score tensors, label CSVs, and the contest-style
prediction export.

Tensor container layout (all integers little-endian):

    bytes 0..15   magic+version  b"GAPENS.TENSOR.1\\n"
    u64           manifest byte length
    ...           manifest, compact JSON with sorted keys
    u64           example-id block byte length
    ...           example ids, utf-8, joined by "\\n"
    ...           payload, raw little-endian float32, row-major

Prediction manifests carry {dtype, kind, model_name, n_classes,
n_examples}; other payload kinds reuse the same container with a
different ``kind`` and extra manifest fields. Round-trips are bit-exact.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FormatError, LabelSet, PredictionSet

logger = logging.getLogger(__name__)

MAGIC = b"GAPENS.TENSOR.1\n"
_U64 = struct.Struct("<Q")


def _write_block(fh, data: bytes) -> None:
    fh.write(_U64.pack(len(data)))
    fh.write(data)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _read_block(fh, what: str) -> bytes:
    (n,) = _U64.unpack(_read_exact(fh, 8, f"{what} length"))
    return _read_exact(fh, n, what)


def write_tensor(path, manifest: dict, example_ids: Sequence[str], payload: np.ndarray) -> None:
    """Write a container file; payload is flattened to little-endian f32."""
    flat = np.ascontiguousarray(payload, dtype="<f4").ravel()
    body = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _write_block(fh, body)
        _write_block(fh, "\n".join(example_ids).encode())
        fh.write(flat.tobytes())


def read_tensor(path) -> tuple[dict, list[str], np.ndarray]:
    """Read a container file; returns (manifest, example_ids, f32 payload)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise FormatError(f"{path}: bad magic; not a tensor container")
        try:
            manifest = json.loads(_read_block(fh, "manifest"))
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: malformed manifest: {e}") from e
        ids_raw = _read_block(fh, "example ids")
        payload = np.frombuffer(fh.read(), dtype="<f4")
    ids = ids_raw.decode().split("\n") if ids_raw else []
    return manifest, ids, payload


def save_predictions(pred: PredictionSet, path) -> None:
    manifest = {
        "dtype": "f32",
        "kind": "predictions",
        "model_name": pred.model_name,
        "n_examples": pred.n_examples,
        "n_classes": pred.n_classes,
    }
    write_tensor(path, manifest, pred.example_ids, pred.scores)


def load_predictions(path, clamp: bool = False) -> PredictionSet:
    """Load a prediction tensor.

    Scores outside [0, 1] are rejected unless ``clamp`` is set, in which
    case they are clamped and the count is logged.
    """
    manifest, ids, payload = read_tensor(path)
    if manifest.get("kind") != "predictions":
        raise FormatError(f"{path}: container kind {manifest.get('kind')!r} is not predictions")
    try:
        n, c = int(manifest["n_examples"]), int(manifest["n_classes"])
        name = manifest["model_name"]
    except KeyError as e:
        raise FormatError(f"{path}: manifest missing {e}") from e
    if manifest.get("dtype") != "f32":
        raise FormatError(f"{path}: unsupported dtype {manifest.get('dtype')!r}")
    if payload.size != n * c:
        raise FormatError(f"{path}: declared {n}x{c} but payload has {payload.size} values")
    if len(ids) != n and not (n == 0 and not ids):
        raise FormatError(f"{path}: declared {n} examples but found {len(ids)} ids")
    scores = payload.reshape(n, c)
    if not np.all(np.isfinite(scores)):
        raise FormatError(f"{path}: payload contains non-finite values")
    out_of_range = int(np.count_nonzero((scores < 0.0) | (scores > 1.0)))
    if out_of_range:
        if not clamp:
            raise FormatError(
                f"{path}: {out_of_range} scores outside [0, 1] (pass clamp=True to accept)"
            )
        scores = np.clip(scores, 0.0, 1.0)
        logger.warning("%s: clamped %d scores into [0, 1]", path, out_of_range)
    return PredictionSet(name, scores, tuple(ids))


def _sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_labels(labels: LabelSet, path) -> None:
    """Write the label CSV plus its n_classes sidecar."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for ex_id, row in zip(labels.example_ids, labels.positives):
            writer.writerow([ex_id, " ".join(str(c) for c in row)])
    _sidecar_path(path).write_text(json.dumps({"n_classes": labels.n_classes}) + "\n")


def load_labels(path, n_classes: int | None = None) -> LabelSet:
    """Load a label CSV; n_classes comes from the sidecar unless given."""
    if n_classes is None:
        sidecar = _sidecar_path(path)
        if not sidecar.exists():
            raise FormatError(f"{path}: missing sidecar {sidecar} and no n_classes given")
        n_classes = int(json.loads(sidecar.read_text())["n_classes"])
    ids: list[str] = []
    rows: list[np.ndarray] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            ids.append(row[0])
            classes = np.array([int(t) for t in row[1].split()], dtype=np.int32)
            rows.append(classes)
    try:
        return LabelSet(n_classes, tuple(rows), tuple(ids))
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def save_features(features: np.ndarray, example_ids: Sequence[str], path) -> None:
    """Store an (N, D) feature matrix in the tensor container."""
    features = np.asarray(features)
    manifest = {
        "dtype": "f32",
        "kind": "features",
        "model_name": "features",
        "n_examples": int(features.shape[0]),
        "n_classes": int(features.shape[1]),
    }
    write_tensor(path, manifest, example_ids, features)


def load_features(path) -> tuple[np.ndarray, list[str]]:
    manifest, ids, payload = read_tensor(path)
    if manifest.get("kind") != "features":
        raise FormatError(f"{path}: container kind {manifest.get('kind')!r} is not features")
    n, d = int(manifest["n_examples"]), int(manifest["n_classes"])
    if payload.size != n * d:
        raise FormatError(f"{path}: declared {n}x{d} but payload has {payload.size} values")
    return payload.reshape(n, d), ids


def export_top_k_csv(pred: PredictionSet, path, k: int = 20) -> None:
    """Contest-style export: ``VideoId,LabelConfidencePairs`` rows.

    Pairs are the top-k classes by descending score (ties broken by
    ascending class index), scores clamped to [0, 1] and printed with 6
    significant digits.
    """
    scores = np.clip(pred.scores.astype(np.float64), 0.0, 1.0)
    k = min(k, pred.n_classes)
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    with open(path, "w", newline="") as fh:
        fh.write("VideoId,LabelConfidencePairs\n")
        for i, ex_id in enumerate(pred.example_ids):
            pairs = " ".join(f"{c} {scores[i, c]:.6g}" for c in order[i])
            fh.write(f"{ex_id},{pairs}\n")
