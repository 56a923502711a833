"""Report emission: CSV/JSON writers shared by the CLI.

Every report opens with a provenance comment line (tool version, config
hash, seed) so re-runs are verifiably identical; no timestamps, so
re-running a config reproduces each file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .combine import FitReport, GreedyTrace
from .core import LabelSet
from .diversity import DiversityCurve
from .metrics import ClassAccuracyReport


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def provenance(config: dict, seed) -> str:
    return f"gapens {__version__} config={config_hash(config)} seed={seed}"


def _fmt(v) -> str:
    return repr(float(v))


def write_json_report(path, payload: dict, config: dict, seed) -> None:
    doc = {"provenance": provenance(config, seed), **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_class_report_csv(
    path, report: ClassAccuracyReport, labels: LabelSet, config: dict, seed
) -> None:
    """One row per class: positive rate, mean accuracy, then per-model
    accuracy and deviation columns."""
    rate = labels.positive_counts / max(labels.n_examples, 1)
    with open(path, "w") as fh:
        fh.write(f"# {provenance(config, seed)}\n")
        acc_cols = ",".join(f"acc_{m}" for m in report.model_names)
        dev_cols = ",".join(f"dev_{m}" for m in report.model_names)
        fh.write(f"class,positive_rate,mean_accuracy,{acc_cols},{dev_cols}\n")
        for row, cls in enumerate(report.class_indices):
            accs = ",".join(_fmt(v) for v in report.accuracy[row])
            devs = ",".join(_fmt(v) for v in report.deviation[row])
            fh.write(
                f"{cls},{_fmt(rate[cls])},{_fmt(report.mean_accuracy[row])},{accs},{devs}\n"
            )


def write_deviation_matrix_csv(path, report: ClassAccuracyReport, config: dict, seed) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {provenance(config, seed)}\n")
        fh.write("model," + ",".join(report.model_names) + "\n")
        for name, row in zip(report.model_names, report.deviation_matrix):
            fh.write(name + "," + ",".join(_fmt(v) for v in row) + "\n")


def write_sweep_csv(path, curves: Sequence[DiversityCurve], config: dict, seed) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {provenance(config, seed)}\n")
        fh.write("class,size,subset_count,min,mean,max,undefined_count\n")
        for curve in curves:
            for i, size in enumerate(curve.sizes):
                fh.write(
                    f"{curve.class_idx},{size},{curve.subset_count[i]},"
                    f"{_fmt(curve.minimum[i])},{_fmt(curve.mean[i])},{_fmt(curve.maximum[i])},"
                    f"{curve.undefined_count[i]}\n"
                )


def write_fit_report(prefix, report: FitReport, config: dict, seed) -> None:
    """JSON summary plus the per-epoch CSV trajectory."""
    payload = {
        "kind": report.kind,
        "model_names": list(report.model_names),
        "seed": report.seed,
        "hyperparameters": report.hyperparameters,
        "final_train_gap": report.train_gap[-1],
        "final_heldout_gap": report.heldout_gap[-1],
        "final_train_loss": report.train_loss[-1],
    }
    write_json_report(str(prefix) + ".json", payload, config, seed)
    with open(str(prefix) + ".csv", "w") as fh:
        fh.write(f"# {provenance(config, seed)}\n")
        w_cols = ",".join(f"w_{m}" for m in report.model_names)
        fh.write(f"epoch,train_gap,heldout_gap,train_loss,{w_cols}\n")
        for i, epoch in enumerate(report.epochs):
            ws = ",".join(_fmt(v) for v in report.weight_snapshots[i])
            fh.write(
                f"{epoch},{_fmt(report.train_gap[i])},{_fmt(report.heldout_gap[i])},"
                f"{_fmt(report.train_loss[i])},{ws}\n"
            )


def trace_to_dict(trace: GreedyTrace) -> dict:
    return {
        "model_names": list(trace.model_names),
        "order": list(trace.order),
        "seed_pair": list(trace.seed_pair),
        "final_gap": trace.final_gap,
        "initial_correlations": [
            [None if np.isnan(v) else v for v in row] for row in trace.initial_correlations
        ],
        "steps": [
            {
                "candidate": s.candidate,
                "candidate_name": s.candidate_name,
                "correlation": s.correlation,
                "w_fit": s.w_fit,
                "w_used": s.w_used,
                "guard_applied": s.guard_applied,
                "fallback": s.diagnostics.fallback,
                "grid": list(s.diagnostics.grid),
                "gap_samples": list(s.diagnostics.gap_samples),
                "quadratic": list(s.diagnostics.coefficients),
                "gap_after": s.gap_after,
            }
            for s in trace.steps
        ],
    }


def write_improvement_report(
    path,
    classes: np.ndarray,
    positive_rate: np.ndarray,
    base_mean_acc: np.ndarray,
    base_best_acc: np.ndarray,
    ensemble_acc: np.ndarray,
    config: dict,
    seed,
) -> Optional[int]:
    """Per-class comparison of the ensemble against the base models.

    Returns the number of classes where the ensemble is at least as
    accurate as every base model.
    """
    wins = 0
    with open(path, "w") as fh:
        fh.write(f"# {provenance(config, seed)}\n")
        fh.write("class,positive_rate,base_mean_acc,base_best_acc,ensemble_acc,delta_vs_mean\n")
        for i, cls in enumerate(classes):
            delta = ensemble_acc[i] - base_mean_acc[i]
            if ensemble_acc[i] >= base_best_acc[i]:
                wins += 1
            fh.write(
                f"{cls},{_fmt(positive_rate[i])},{_fmt(base_mean_acc[i])},"
                f"{_fmt(base_best_acc[i])},{_fmt(ensemble_acc[i])},{_fmt(delta)}\n"
            )
    return wins
