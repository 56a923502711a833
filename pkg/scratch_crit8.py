"""Scratch: criterion 8 (kappa upper bound decreasing) and the N=200
per-class overfitting example."""
import time

import numpy as np

from gapens import (
    FamilySpec,
    MoeHyperparams,
    SynthSpec,
    gen_dataset,
    gen_predictor_family,
    moe_fit,
    oracle_matrix,
    split_examples,
    subset_sweep,
    top_frequency_classes,
)

t0 = time.time()
spec = SynthSpec(
    seed=2024, n_examples=20_000, n_classes=500, feature_dim=32, skew=1.2, noise_scale=0.3,
    family=FamilySpec(
        count=6, feature_fraction=0.55, label_noise=0.12, hidden_dim=64,
        n_resnet_blocks=1, dropout_rate=0.1, epochs=12, lr=1e-2, batch_size=256,
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
family = gen_predictor_family(spec, dataset)
preds, labels = list(family.predictions), family.labels
print(f"family ready t={time.time()-t0:.0f}s")

oracles = [oracle_matrix(p, labels, 0.5) for p in preds]
top10 = top_frequency_classes(labels, 10)
curves = subset_sweep(oracles, top10, "kappa")
for curve in curves:
    maxima = curve.maximum
    defined = ~np.isnan(maxima)
    viol = []
    for i in range(1, len(maxima)):
        if defined[i] and defined[i - 1] and maxima[i] > maxima[i - 1] + 1e-12:
            viol.append((int(curve.sizes[i]), maxima[i] - maxima[i - 1]))
    print(
        f"class {curve.class_idx}: max kappa by size "
        f"{[None if np.isnan(v) else round(v, 4) for v in maxima]} violations={viol} "
        f"undef={curve.undefined_count.tolist()}"
    )
print(f"t={time.time()-t0:.0f}s")

# --- moe_fit contract example: N=200 ensemble-train, per-class, overfit ------
tiny = split_examples(labels.n_examples, seed=7, fraction=0.02)
print("tiny:", tiny.part_a.size)
for lr in (5e-3, 1e-2):
    hp = MoeHyperparams(lr=lr, epochs=50, batch_size=256, k=20)
    rep = moe_fit(preds, labels, "per_model_class", hp, tiny, seed=1)
    tg = np.asarray(rep.train_gap)
    hg = np.asarray(rep.heldout_gap)
    increases = np.diff(tg) >= -1e-9
    peak = hg.argmax()
    print(
        f"lr={lr}: train {tg[0]:.4f}->{tg[-1]:.4f} monotone_frac={increases.mean():.2f} "
        f"held peak@{peak+1} {hg[peak]:.4f} final {hg[-1]:.4f}"
    )
print(f"t={time.time()-t0:.0f}s")
