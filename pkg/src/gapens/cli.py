"""Command-line driver: reproducible experiment pipelines from a JSON
config plus optional flag overrides (flags win; overrides are logged).

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
All paths in a config are resolved relative to the config file, and all
randomness flows from the single config seed, so re-running a config
rewrites every output byte-identically.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .combine import (
    EnsembleWeights,
    MoeHyperparams,
    apply_weights,
    greedy_correlation_ensemble,
    load_weights,
    moe_fit,
    save_weights,
)
from .core import (
    AlignmentError,
    FormatError,
    NumericError,
    PredictionSet,
    select_rows,
    split_examples,
)
from .diversity import subset_sweep
from .io import (
    export_top_k_csv,
    load_features,
    load_labels,
    load_predictions,
    save_features,
    save_labels,
    save_predictions,
)
from .metrics import (
    class_accuracy_report,
    gap_at_k,
    oracle_matrix,
    top_frequency_classes,
)
from .nets import NetTrainConfig, ToyNetConfig, fcrn_train, predict_scores, save_toynet
from .reports import (
    provenance,
    trace_to_dict,
    write_class_report_csv,
    write_deviation_matrix_csv,
    write_fit_report,
    write_improvement_report,
    write_json_report,
    write_sweep_csv,
)
from .synth import SynthSpec, gen_dataset, gen_predictor_family

SCHEMA_VERSION = 1

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class Experiment:
    """A parsed config: raw sections plus path resolution and overrides."""

    def __init__(self, doc: dict, base_dir: Path):
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(
                f"config schema_version must be {SCHEMA_VERSION}, got {doc.get('schema_version')}"
            )
        if "seed" not in doc:
            raise FormatError("config must declare a seed")
        self.doc = doc
        self.base_dir = base_dir
        self.seed = int(doc["seed"])

    @classmethod
    def load(cls, config_path: str) -> "Experiment":
        path = Path(config_path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from e
        return cls(doc, path.parent.resolve())

    def path(self, value: str) -> Path:
        return (self.base_dir / value).resolve()

    def out_dir(self) -> Path:
        out = self.path(self.doc.get("output_dir", "."))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def section(self, name: str) -> dict:
        return dict(self.doc.get(name, {}))

    def override(self, section: dict, key: str, value) -> dict:
        if value is not None:
            if key in section and section[key] != value:
                click.echo(f"flag overrides config: {key}={value}", err=True)
            section[key] = value
        return section

    def load_prediction_sets(self, clamp: bool = False):
        paths = self.doc.get("predictions")
        if not paths:
            raise FormatError("config must list prediction files under 'predictions'")
        return [load_predictions(self.path(p), clamp=clamp) for p in paths]

    def load_label_set(self):
        if "labels" not in self.doc:
            raise FormatError("config must name a label file under 'labels'")
        return load_labels(self.path(self.doc["labels"]))


def guarded(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericError as e:
            click.echo(f"numeric failure: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (FormatError, AlignmentError, FileNotFoundError, ValueError, KeyError) as e:
            click.echo(f"data error: {e}", err=True)
            sys.exit(EXIT_DATA)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="gapens")
def main():
    """Evaluate, analyze, and combine multi-label classifier ensembles."""


config_option = click.option(
    "--config", "-c", "config_path", required=True, type=click.Path(exists=True, dir_okay=False)
)
seed_option = click.option("--seed", type=int, default=None, help="Override the config seed.")


def _apply_seed(exp: Experiment, seed) -> None:
    if seed is not None:
        if seed != exp.seed:
            click.echo(f"flag overrides config: seed={seed}", err=True)
        exp.seed = seed


@main.command()
@config_option
@seed_option
@guarded
def synth(config_path, seed):
    """Generate a synthetic dataset and a diverse predictor family."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    spec = SynthSpec.from_dict({"seed": exp.seed, **exp.section("synth")})
    dataset = gen_dataset(spec)
    family = gen_predictor_family(spec, dataset)

    save_labels(dataset.labels, out / "labels.csv")
    save_features(dataset.features, dataset.labels.example_ids, out / "features.tensor")
    save_labels(family.labels, out / "heldout_labels.csv")
    member_files = []
    for pred in family.predictions:
        fname = f"{pred.model_name}.pred"
        save_predictions(pred, out / fname)
        member_files.append(fname)
    write_json_report(
        out / "family.json",
        {
            "spec": spec.to_dict(),
            "members": member_files,
            "attempts": family.attempts,
            "heldout_indices": family.heldout_indices.tolist(),
            "correlations": [
                [None if np.isnan(v) else v for v in row] for row in family.correlations
            ],
            "feature_subsets": [s.tolist() for s in family.feature_subsets],
        },
        exp.doc,
        exp.seed,
    )
    click.echo(f"wrote dataset and {len(member_files)} members to {out}")


@main.command()
@config_option
@seed_option
@click.option("--blocks-sweep", default=None, help="Comma-separated residual block counts.")
@guarded
def train(config_path, seed, blocks_sweep):
    """Train toy nets on a feature file and emit held-out predictions."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.section("train")
    if blocks_sweep is not None:
        sec["blocks_sweep"] = [int(b) for b in blocks_sweep.split(",")]

    features, ids = load_features(exp.path(sec.get("features", "features.tensor")))
    labels = load_labels(exp.path(sec.get("labels", "labels.csv")))
    if list(labels.example_ids) != ids:
        raise AlignmentError("feature file and label file cover different examples")
    split = split_examples(features.shape[0], exp.seed, float(sec.get("train_fraction", 0.5)))
    x_train, x_held = features[split.part_a], features[split.part_b]
    y_train = labels.dense[split.part_a]
    held_ids = tuple(labels.example_ids[i] for i in split.part_b)
    held_labels = select_rows(labels, split.part_b)

    hp = NetTrainConfig(
        lr=float(sec.get("lr", 1e-3)),
        epochs=int(sec.get("epochs", 50)),
        batch_size=int(sec.get("batch_size", 128)),
        log_gap=False,
    )
    block_counts = sec.get("blocks_sweep") or [int(sec.get("n_resnet_blocks", 1))]
    rows = []
    for n_blocks in block_counts:
        cfg = ToyNetConfig(
            input_dim=features.shape[1],
            hidden_dims=tuple(sec.get("hidden_dims", [64])),
            n_resnet_blocks=int(n_blocks),
            dropout_rate=float(sec.get("dropout_rate", 0.1)),
            n_classes=labels.n_classes,
            use_gated_output=bool(sec.get("use_gated_output", True)),
            seed=exp.seed,
        )
        params, log = fcrn_train(cfg, (x_train, y_train), hp, seed=exp.seed)
        scores = predict_scores(cfg, params, x_held)
        pred = PredictionSet(f"toynet_b{n_blocks}", scores, held_ids)
        gap = gap_at_k(pred, held_labels, int(sec.get("k", 20)))
        save_toynet(cfg, params, out / f"toynet_b{n_blocks}.params")
        save_predictions(pred, out / f"toynet_b{n_blocks}.pred")
        with open(out / f"toynet_b{n_blocks}_log.csv", "w") as fh:
            fh.write(f"# {provenance(exp.doc, exp.seed)}\n")
            fh.write("epoch,loss,train_gap,heldout_gap\n")
            for i, epoch in enumerate(log.epochs):
                fh.write(
                    f"{epoch},{log.loss[i]!r},{log.train_gap[i]!r},{log.heldout_gap[i]!r}\n"
                )
        rows.append((n_blocks, log.loss[-1], gap))
        click.echo(f"blocks={n_blocks} final_loss={log.loss[-1]:.4f} heldout_gap={gap:.4f}")
    with open(out / "block_sweep.csv", "w") as fh:
        fh.write(f"# {provenance(exp.doc, exp.seed)}\n")
        fh.write("n_resnet_blocks,final_loss,heldout_gap\n")
        for n_blocks, loss, gap in rows:
            fh.write(f"{n_blocks},{loss!r},{gap!r}\n")


@main.command(name="eval")
@config_option
@seed_option
@click.option("--k", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@guarded
def eval_cmd(config_path, seed, k, threshold):
    """Score predictions: ranking metric plus per-class accuracy reports."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.override(exp.override(exp.section("eval"), "k", k), "threshold", threshold)
    k = int(sec.get("k", 20))
    threshold = float(sec.get("threshold", 0.5))
    preds = exp.load_prediction_sets(clamp=bool(sec.get("clamp", False)))
    labels = exp.load_label_set()

    gaps = {p.model_name: gap_at_k(p, labels, k) for p in preds}
    write_json_report(
        out / "gap.json",
        {"k": k, "threshold": threshold, "models": gaps},
        exp.doc,
        exp.seed,
    )
    if len(preds) >= 2:
        oracles = [oracle_matrix(p, labels, threshold) for p in preds]
        top = sec.get("top_classes", 100)
        classes = None
        if top and int(top) < labels.n_classes:
            classes = top_frequency_classes(labels, int(top))
        report = class_accuracy_report(oracles, classes)
        write_class_report_csv(out / "class_report.csv", report, labels, exp.doc, exp.seed)
        write_deviation_matrix_csv(out / "delta_matrix.csv", report, exp.doc, exp.seed)
    for name, value in gaps.items():
        click.echo(f"{name}: gap@{k} = {value:.6f}")


@main.command()
@config_option
@seed_option
@click.option("--measure", type=click.Choice(["entropy", "kappa"]), default=None)
@click.option("--threads", type=int, default=1, help="Worker cap for the per-class sweep.")
@guarded
def diversity(config_path, seed, measure, threads):
    """Exhaustive per-class diversity sweep over model subsets."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.override(exp.section("diversity"), "measure", measure)
    measure = sec.get("measure", "entropy")
    threshold = float(sec.get("threshold", 0.5))
    preds = exp.load_prediction_sets()
    labels = exp.load_label_set()
    if len(preds) < 2:
        raise ValueError("diversity sweep needs at least 2 prediction files")
    oracles = [oracle_matrix(p, labels, threshold) for p in preds]
    if sec.get("classes"):
        classes = [int(c) for c in sec["classes"]]
    else:
        classes = top_frequency_classes(labels, min(int(sec.get("top_classes", 10)), labels.n_classes))
    curves = subset_sweep(oracles, classes, measure, threads=threads)
    write_sweep_csv(out / f"diversity_{measure}.csv", curves, exp.doc, exp.seed)
    click.echo(f"wrote diversity_{measure}.csv for {len(list(classes))} classes")


@main.group()
def ensemble():
    """Fit or apply ensemble weights."""


METHODS = ("average", "correlation", "moe-single", "moe-perclass", "moe-dual")
MOE_KINDS = {"moe-single": "per_model", "moe-perclass": "per_model_class", "moe-dual": "dual_stream"}


@ensemble.command()
@config_option
@seed_option
@click.option("--method", type=click.Choice(METHODS), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--l2", type=float, default=None)
@click.option("--fraction", type=float, default=None)
@guarded
def fit(config_path, seed, method, lr, epochs, l2, fraction):
    """Learn combiner weights on the fit part of a deterministic split."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.section("ensemble")
    for key, value in (("method", method), ("lr", lr), ("epochs", epochs), ("l2", l2), ("fraction", fraction)):
        exp.override(sec, key, value)
    method = sec.get("method", "average")
    if method not in METHODS:
        raise ValueError(f"unknown ensemble method {method!r}")
    if sec.get("l2") is not None and method != "moe-dual":
        click.echo(f"warning: l2 is ignored by method {method}", err=True)
    preds = exp.load_prediction_sets()
    labels = exp.load_label_set()
    k = int(sec.get("k", 20))
    split = split_examples(labels.n_examples, exp.seed, float(sec.get("fraction", 0.5)))
    fit_preds = [select_rows(p, split.part_a) for p in preds]
    fit_labels = select_rows(labels, split.part_a)
    held_preds = [select_rows(p, split.part_b) for p in preds]
    held_labels = select_rows(labels, split.part_b)
    weights_path = out / sec.get("weights", "weights.json")

    if method == "average":
        weights = EnsembleWeights.uniform([p.model_name for p in preds])
        weights = EnsembleWeights(
            kind="average",
            model_names=weights.model_names,
            alpha=weights.alpha,
            metadata={"seed": exp.seed, "hyperparameters": {"method": "average"}},
        )
        summary = {
            "method": method,
            "train_gap": gap_at_k(apply_weights(fit_preds, weights), fit_labels, k),
            "heldout_gap": gap_at_k(apply_weights(held_preds, weights), held_labels, k),
        }
        write_json_report(out / "fit_summary.json", summary, exp.doc, exp.seed)
    elif method == "correlation":
        grid = tuple(sec.get("grid", (0.2, 0.4, 0.6, 0.8)))
        max_models = sec.get("max_models")
        weights, trace = greedy_correlation_ensemble(
            fit_preds, fit_labels, grid=grid, k=k, max_models=max_models
        )
        weights = EnsembleWeights(
            kind=weights.kind,
            model_names=weights.model_names,
            alpha=weights.alpha,
            metadata={"seed": exp.seed, "hyperparameters": {"method": method, "grid": list(grid)}},
        )
        summary = {
            "method": method,
            "trace": trace_to_dict(trace),
            "train_gap": trace.final_gap,
            "heldout_gap": gap_at_k(apply_weights(held_preds, weights), held_labels, k),
        }
        write_json_report(out / "fit_summary.json", summary, exp.doc, exp.seed)
    else:
        hp = MoeHyperparams(
            lr=float(sec.get("lr", 1e-3)),
            epochs=int(sec.get("epochs", 50)),
            batch_size=int(sec.get("batch_size", 1024)),
            l2=float(sec.get("l2", 1e-3)),
            k=k,
        )
        report = moe_fit(preds, labels, MOE_KINDS[method], hp, split, exp.seed)
        weights = report.final_weights
        write_fit_report(out / "fit_report", report, exp.doc, exp.seed)
        summary = {
            "method": method,
            "train_gap": report.train_gap[-1],
            "heldout_gap": report.heldout_gap[-1],
        }
        write_json_report(out / "fit_summary.json", summary, exp.doc, exp.seed)
    save_weights(weights, weights_path)
    click.echo(
        f"{method}: train_gap={summary['train_gap']:.6f} heldout_gap={summary['heldout_gap']:.6f}"
    )


@ensemble.command()
@config_option
@seed_option
@click.option("--kaggle", "kaggle_path", default=None, help="Also write a contest-style CSV.")
@guarded
def apply(config_path, seed, kaggle_path):
    """Combine prediction files with stored weights."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.override(exp.section("apply"), "kaggle", kaggle_path)
    weights = load_weights(exp.path(sec.get("weights", str(out / "weights.json"))))
    preds = exp.load_prediction_sets()
    combined = apply_weights(preds, weights)
    target = out / sec.get("output", "ensemble.pred")
    save_predictions(combined, target)
    if sec.get("kaggle"):
        export_top_k_csv(combined, out / sec["kaggle"], k=int(sec.get("k", 20)))
    click.echo(f"wrote {target}")


@main.command()
@config_option
@seed_option
@guarded
def report(config_path, seed):
    """Per-class improvement analysis of an ensemble over its base models."""
    exp = Experiment.load(config_path)
    _apply_seed(exp, seed)
    out = exp.out_dir()
    sec = exp.section("report")
    preds = exp.load_prediction_sets()
    labels = exp.load_label_set()
    ens = load_predictions(exp.path(sec.get("ensemble", str(out / "ensemble.pred"))))
    threshold = float(sec.get("threshold", 0.5))
    top = min(int(sec.get("top_classes", 100)), labels.n_classes)
    classes = top_frequency_classes(labels, top)

    base_acc = np.stack(
        [oracle_matrix(p, labels, threshold).bits[:, classes].mean(axis=0) for p in preds]
    )
    ens_acc = oracle_matrix(ens, labels, threshold).bits[:, classes].mean(axis=0)
    rate = labels.positive_counts[classes] / labels.n_examples
    wins = write_improvement_report(
        out / "improvement.csv",
        classes,
        rate,
        base_acc.mean(axis=0),
        base_acc.max(axis=0),
        ens_acc,
        exp.doc,
        exp.seed,
    )
    write_json_report(
        out / "improvement_summary.json",
        {"top_classes": top, "ensemble_best_classes": wins},
        exp.doc,
        exp.seed,
    )
    click.echo(f"ensemble is the most accurate model on {wins} of the top {top} classes")


if __name__ == "__main__":
    main()
