import numpy as np
import pytest

from gapens import (
    ToyNetConfig,
    aggregate_mean_std,
    fcrn_forward,
    fcrn_train,
    gated_layer_forward,
    grad_check,
    init_params,
    resnet_block_forward,
)
from gapens.nets import (
    NetTrainConfig,
    load_toynet,
    predict_scores,
    sample_masks,
    save_toynet,
    sigmoid,
)
from gapens.rng import make_rng


class TestAggregateMeanStd:
    def test_identical_frames(self):
        v = np.array([3.0, 4.0])
        fv = aggregate_mean_std(np.tile(v, (5, 1)))
        assert np.allclose(fv.mean, v / 5.0)  # v / ||v||
        assert np.allclose(fv.std, 0.0)
        assert fv.vector.shape == (4,)

    def test_single_feature_arithmetic(self):
        fv = aggregate_mean_std(np.array([[1.0], [3.0]]))
        # raw mean 2, raw population std 1; each part normalizes to 1
        assert np.allclose(fv.vector, [1.0, 1.0])

    def test_matches_loops(self, rng):
        frames = rng.normal(size=(5, 3))
        fv = aggregate_mean_std(frames)
        t = frames.shape[0]
        mean = [sum(frames[i][j] for i in range(t)) / t for j in range(3)]
        var = [sum((frames[i][j] - mean[j]) ** 2 for i in range(t)) / t for j in range(3)]
        std = np.sqrt(var)
        mean = np.asarray(mean) / np.linalg.norm(mean)
        std = std / np.linalg.norm(std)
        assert np.allclose(fv.mean, mean, atol=1e-12)
        assert np.allclose(fv.std, std, atol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_mean_std(np.empty((0, 3)))


class TestGatedLayer:
    def test_open_gate_passes_input(self, rng):
        x = rng.normal(size=4)
        y = gated_layer_forward(x, np.zeros((4, 4)), np.full(4, 30.0))
        assert np.allclose(y, x, atol=1e-8)

    def test_closed_gate_blocks(self, rng):
        x = rng.normal(size=4)
        y = gated_layer_forward(x, np.zeros((4, 4)), np.full(4, -30.0))
        assert np.allclose(y, 0.0, atol=1e-8)

    def test_matches_elementwise_computation(self, rng):
        x = rng.normal(size=3)
        w = rng.normal(size=(3, 3))
        b = rng.normal(size=3)
        expected = [x[i] * (1.0 / (1.0 + np.exp(-(w[i] @ x + b[i])))) for i in range(3)]
        assert np.allclose(gated_layer_forward(x, w, b), expected, atol=1e-12)

    def test_gate_never_amplifies(self, rng):
        for _ in range(25):
            x = rng.normal(size=6)
            w = rng.normal(size=(6, 6))
            b = rng.normal(size=6)
            y = gated_layer_forward(x, w, b)
            assert np.all(np.abs(y) <= np.abs(x) + 1e-15)

    def test_shape_check(self, rng):
        with pytest.raises(ValueError):
            gated_layer_forward(np.ones(3), np.ones((2, 3)))


class TestResnetBlock:
    def test_zero_weights_identity_bitexact(self, rng):
        for _ in range(100):
            x = rng.normal(size=5)
            c1 = np.zeros((7, 5))
            c2 = np.zeros((5, 7))
            y = resnet_block_forward(x, c1, c2, np.ones(7))
            assert np.array_equal(y, x)

    def test_zero_mask_is_skip(self, rng):
        x = rng.normal(size=4)
        c1 = rng.normal(size=(6, 4))
        c2 = rng.normal(size=(4, 6))
        assert np.array_equal(resnet_block_forward(x, c1, c2, np.zeros(6)), x)

    def test_matches_hand_computation(self, rng):
        x = rng.normal(size=3)
        c1 = rng.normal(size=(2, 3))
        c2 = rng.normal(size=(3, 2))
        mask = np.array([2.0, 0.0])  # inverted dropout with p=0.5: kept unit scales by 2
        hidden = np.maximum(c1 @ x, 0.0) * mask
        expected = c2 @ hidden + x
        assert np.allclose(resnet_block_forward(x, c1, c2, mask), expected, atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            resnet_block_forward(np.ones(3), np.ones((2, 3)), np.ones((2, 2)), np.ones(2))


def small_cfg(**kw):
    defaults = dict(
        input_dim=6,
        hidden_dims=(8,),
        n_resnet_blocks=2,
        dropout_rate=0.0,
        n_classes=4,
        use_gated_output=True,
        seed=3,
    )
    defaults.update(kw)
    return ToyNetConfig(**defaults)


class TestForward:
    def test_zero_output_layer_gives_half(self, rng):
        cfg = small_cfg()
        params = init_params(cfg)
        params.w_out[:] = 0.0
        params.b_out[:] = 0.0
        out = fcrn_forward(cfg, params, rng.normal(size=6))
        assert np.allclose(out, 0.5)

    def test_no_blocks_composition(self, rng):
        cfg = small_cfg(n_resnet_blocks=0)
        params = init_params(cfg)
        x = rng.normal(size=6)
        manual = np.maximum(params.w_in @ x, 0.0)
        manual = gated_layer_forward(manual, params.w_gate, params.b_gate)
        manual = sigmoid(params.w_out @ manual + params.b_out)
        assert np.allclose(fcrn_forward(cfg, params, x), manual, atol=1e-12)

    def test_infer_ignores_rng(self, rng):
        cfg = small_cfg(dropout_rate=0.4)
        params = init_params(cfg)
        x = rng.normal(size=6)
        a = fcrn_forward(cfg, params, x, mode="infer", rng=make_rng(1))
        b = fcrn_forward(cfg, params, x, mode="infer", rng=make_rng(999))
        assert np.array_equal(a, b)

    def test_ungated_variant(self, rng):
        cfg = small_cfg(use_gated_output=False)
        params = init_params(cfg)
        assert params.w_gate is None
        out = fcrn_forward(cfg, params, rng.normal(size=6))
        assert out.shape == (4,)


def _separable_data(rng, n=200, d=8):
    """Two linearly separable clusters; labels one-hot over 2 classes."""
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    x = rng.normal(size=(n, d))
    margin = x @ w
    x += np.outer(np.sign(margin), w)  # push away from the boundary
    labels = np.zeros((n, 2))
    labels[margin > 0, 0] = 1
    labels[margin <= 0, 1] = 1
    return x, labels


def _logistic_regression_loss(x, labels, lr=0.5, steps=3000):
    """Plain gradient-descent logistic baseline, one weight vector per class."""
    n, d = x.shape
    w = np.zeros((labels.shape[1], d))
    b = np.zeros(labels.shape[1])
    for _ in range(steps):
        z = x @ w.T + b
        p = 1.0 / (1.0 + np.exp(-z))
        g = (p - labels) / n
        w -= lr * (g.T @ x)
        b -= lr * g.sum(axis=0)
    z = x @ w.T + b
    return float(
        np.mean(np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - labels * z)
    )


class TestTrain:
    def test_separable_data_converges(self, rng):
        x, labels = _separable_data(rng)
        baseline = _logistic_regression_loss(x, labels)
        assert baseline < 0.05  # sanity: the set really is separable
        cfg = ToyNetConfig(
            input_dim=8,
            hidden_dims=(16,),
            n_resnet_blocks=1,
            dropout_rate=0.0,
            n_classes=2,
            seed=0,
        )
        hp = NetTrainConfig(lr=1e-2, epochs=120, batch_size=64)
        _, log = fcrn_train(cfg, (x, labels), hp, seed=1)
        assert log.loss[-1] < 0.1

    def test_zero_learning_rate_freezes_params(self, rng):
        x, labels = _separable_data(rng, n=40)
        cfg = small_cfg(input_dim=8, n_classes=2)
        hp = NetTrainConfig(lr=0.0, epochs=3, batch_size=16)
        params, _ = fcrn_train(cfg, (x, labels), hp, seed=2)
        fresh = init_params(cfg)
        for key, value in params.to_dict().items():
            assert np.array_equal(value, fresh.to_dict()[key])

    def test_same_seed_bit_identical(self, rng):
        x, labels = _separable_data(rng, n=60)
        cfg = small_cfg(input_dim=8, n_classes=2, dropout_rate=0.3)
        hp = NetTrainConfig(lr=1e-2, epochs=4, batch_size=16)
        p1, log1 = fcrn_train(cfg, (x, labels), hp, seed=7)
        p2, log2 = fcrn_train(cfg, (x, labels), hp, seed=7)
        for key, value in p1.to_dict().items():
            assert np.array_equal(value, p2.to_dict()[key])
        assert log1.loss == log2.loss

    def test_toynet_serialization_roundtrip(self, rng, tmp_path):
        cfg = small_cfg()
        params = init_params(cfg)
        path = tmp_path / "net.params"
        save_toynet(cfg, params, path)
        cfg2, params2 = load_toynet(path)
        assert cfg2 == cfg
        x = rng.normal(size=(3, 6)).astype(np.float32).astype(np.float64)
        # f32 storage: compare forward passes of f32-rounded params
        out_a = predict_scores(cfg2, params2, x)
        assert out_a.shape == (3, 4)


class TestGradCheck:
    def test_random_small_configs(self):
        rng = np.random.default_rng(0)
        for trial in range(6):
            cfg = ToyNetConfig(
                input_dim=int(rng.integers(2, 8)),
                hidden_dims=(int(rng.integers(2, 10)), int(rng.integers(2, 8))),
                n_resnet_blocks=int(rng.integers(0, 3)),
                dropout_rate=0.0,
                n_classes=int(rng.integers(2, 6)),
                use_gated_output=bool(trial % 2),
                seed=trial,
            )
            params = init_params(cfg)
            x = rng.normal(size=(3, cfg.input_dim))
            labels = (rng.random((3, cfg.n_classes)) < 0.4).astype(float)
            err = grad_check(cfg, params, (x, labels))
            assert err < 1e-6

    def test_frozen_dropout_mask_accepted(self):
        rng = np.random.default_rng(1)
        cfg = small_cfg(dropout_rate=0.5)
        params = init_params(cfg)
        x = rng.normal(size=(2, 6))
        labels = (rng.random((2, 4)) < 0.5).astype(float)
        masks = sample_masks(cfg, make_rng(3), 2)
        err = grad_check(cfg, params, (x, labels), masks=masks)
        assert err < 1e-6

    def test_unfrozen_dropout_rejected(self):
        cfg = small_cfg(dropout_rate=0.5)
        params = init_params(cfg)
        with pytest.raises(ValueError, match="frozen"):
            grad_check(cfg, params, (np.ones((1, 6)), np.ones((1, 4))))

    def test_near_zero_gradient_absolute_regime(self, rng):
        # train to near convergence, then check absolute errors
        x, labels = _separable_data(rng, n=60)
        cfg = ToyNetConfig(
            input_dim=8, hidden_dims=(8,), n_resnet_blocks=1,
            dropout_rate=0.0, n_classes=2, seed=4,
        )
        hp = NetTrainConfig(lr=1e-2, epochs=150, batch_size=64)
        params, log = fcrn_train(cfg, (x, labels), hp, seed=5)
        err_abs = grad_check(cfg, params, (x, labels), rel_floor=1.0)
        assert err_abs < 1e-8
