"""Scratch: tune criteria 6 (overfitting signature) and 7 (dual-stream limit)."""
import time

import numpy as np

from gapens import (
    FamilySpec,
    MoeHyperparams,
    SynthSpec,
    gen_dataset,
    gen_predictor_family,
    moe_fit,
    split_examples,
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

# --- criterion 6: tiny ensemble-train (500 of 10k) --------------------------
tiny = split_examples(labels.n_examples, seed=spec.seed + 1, fraction=0.05)
print("tiny split:", tiny.part_a.size, tiny.part_b.size)

hp6 = MoeHyperparams(lr=2e-3, epochs=50, batch_size=256, k=20)
rep_pc = moe_fit(preds, labels, "per_model_class", hp6, tiny, seed=spec.seed)
rep_sg = moe_fit(preds, labels, "per_model", hp6, tiny, seed=spec.seed)

sl = slice(4, 50)  # epochs 5..50


def corr(a, b):
    a, b = np.asarray(a)[sl], np.asarray(b)[sl]
    return float(np.corrcoef(a, b)[0, 1])


c_pc = corr(rep_pc.train_gap, rep_pc.heldout_gap)
c_sg = corr(rep_sg.train_gap, rep_sg.heldout_gap)
print(f"perclass corr(train, heldout) = {c_pc:+.3f} (need < 0)")
print(f"single   corr(train, heldout) = {c_sg:+.3f} (need > 0.5)")
print(f"perclass train gap: {rep_pc.train_gap[4]:.4f} -> {rep_pc.train_gap[-1]:.4f}")
print(f"perclass held  gap: {rep_pc.heldout_gap[4]:.4f} -> {rep_pc.heldout_gap[-1]:.4f}")
print(f"single   train gap: {rep_sg.train_gap[4]:.4f} -> {rep_sg.train_gap[-1]:.4f}")
print(f"single   held  gap: {rep_sg.heldout_gap[4]:.4f} -> {rep_sg.heldout_gap[-1]:.4f}")
print(f"t={time.time()-t0:.0f}s")

# --- criterion 7: dual stream at lambda = 1e3 --------------------------------
split = split_examples(labels.n_examples, seed=spec.seed, fraction=0.5)
for lr in (1e-4, 3e-5):
    hp_dual = MoeHyperparams(lr=lr, epochs=50, batch_size=1024, l2=1e3, k=20)
    hp_sing = MoeHyperparams(lr=lr, epochs=50, batch_size=1024, k=20)
    rep_dual = moe_fit(preds, labels, "dual_stream", hp_dual, split, seed=spec.seed)
    rep_sing = moe_fit(preds, labels, "per_model", hp_sing, split, seed=spec.seed)
    rnorm = float(np.linalg.norm(rep_dual.final_weights.residual))
    dgap = abs(rep_dual.heldout_gap[-1] - rep_sing.heldout_gap[-1])
    print(f"lr={lr:g}: residual_fro={rnorm:.2e} (need <1e-3)  |gap diff|={dgap:.2e} (need <1e-4)")
    print(f"t={time.time()-t0:.0f}s")
