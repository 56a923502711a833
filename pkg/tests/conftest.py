import numpy as np
import pytest

from gapens import FamilySpec, LabelSet, PredictionSet, SynthSpec


def random_pair(rng, n=6, c=5, density=0.3, name="m"):
    """A random aligned (PredictionSet, LabelSet) pair."""
    ids = tuple(f"ex{i}" for i in range(n))
    scores = rng.random((n, c)).astype(np.float32)
    dense = (rng.random((n, c)) < density).astype(np.uint8)
    return PredictionSet(name, scores, ids), LabelSet.from_dense(dense, ids)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# The benchmark family used by the acceptance suite: 20k examples, 500
# classes, skew 1.2, six members with a deliberate quality spread (the
# weaker members see fewer features and noisier labels, so learned
# weights have real work to do).
BENCHMARK_SPEC = SynthSpec(
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


@pytest.fixture(scope="session")
def benchmark_family():
    """Build the acceptance-scale family once per test session (~1 min)."""
    from gapens import gen_dataset, gen_predictor_family

    dataset = gen_dataset(BENCHMARK_SPEC)
    return gen_predictor_family(BENCHMARK_SPEC, dataset)
