"""Scratch: tune the criterion-5 experiment. Not part of the package."""
import time

import numpy as np

from gapens import (
    FamilySpec,
    MoeHyperparams,
    SynthSpec,
    apply_weights,
    average_combine,
    gap_at_k,
    gen_dataset,
    gen_predictor_family,
    greedy_correlation_ensemble,
    moe_fit,
    select_rows,
    split_examples,
)

t0 = time.time()
spec = SynthSpec(
    seed=2024,
    n_examples=20_000,
    n_classes=500,
    feature_dim=32,
    skew=1.2,
    noise_scale=0.3,
    family=FamilySpec(
        count=6,
        feature_fraction=0.55,
        label_noise=0.12,
        hidden_dim=64,
        n_resnet_blocks=1,
        dropout_rate=0.1,
        epochs=12,
        lr=1e-2,
        batch_size=256,
        overrides=(
            {"feature_fraction": 0.8},
            {"feature_fraction": 0.7},
            {"feature_fraction": 0.55},
            {"feature_fraction": 0.5},
            {"feature_fraction": 0.3, "label_noise": 0.3},
            {"feature_fraction": 0.2, "label_noise": 0.4, "epochs": 5},
        ),
    ),
)
dataset = gen_dataset(spec)
print(f"dataset {time.time()-t0:.0f}s")
family = gen_predictor_family(spec, dataset)
print(f"family {time.time()-t0:.0f}s attempts={family.attempts}")
preds, labels = list(family.predictions), family.labels
print("max corr:", np.nanmax(family.correlations[~np.eye(6, dtype=bool)]))

split = split_examples(labels.n_examples, seed=spec.seed, fraction=0.5)
fit_preds = [select_rows(p, split.part_a) for p in preds]
fit_labels = select_rows(labels, split.part_a)
held_preds = [select_rows(p, split.part_b) for p in preds]
held_labels = select_rows(labels, split.part_b)

single_gaps = [gap_at_k(p, held_labels, 20) for p in held_preds]
best_single = max(single_gaps)
print("single gaps:", [round(g, 4) for g in single_gaps])

avg_gap = gap_at_k(average_combine(held_preds), held_labels, 20)
print(f"average heldout GAP {avg_gap:.4f}  best single {best_single:.4f}  t={time.time()-t0:.0f}s")

weights, trace = greedy_correlation_ensemble(fit_preds, fit_labels, k=20)
greedy_gap = gap_at_k(apply_weights(held_preds, weights), held_labels, 20)
print(f"greedy heldout GAP {greedy_gap:.4f} (alpha={np.round(weights.alpha,3)}) t={time.time()-t0:.0f}s")

hp = MoeHyperparams(lr=1e-3, epochs=50, batch_size=1024, k=20)
report = moe_fit(preds, labels, "per_model", hp, split, seed=spec.seed)
moe_gap = report.heldout_gap[-1]
print(f"moe-single heldout GAP {moe_gap:.4f} (alpha={np.round(report.final_weights.alpha,3)}) t={time.time()-t0:.0f}s")

print()
print(f"greedy - best_single = {greedy_gap - best_single:+.5f} (need >= +0.005)")
print(f"greedy - average     = {greedy_gap - avg_gap:+.5f} (need >= +0.0005)")
print(f"moe    - best_single = {moe_gap - best_single:+.5f} (need >= +0.005)")
print(f"moe    - average     = {moe_gap - avg_gap:+.5f} (need >= +0.0005)")
print(f"total time {time.time()-t0:.0f}s")
