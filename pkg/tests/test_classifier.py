import numpy as np
import pytest

from freqcenter.classifier import (
    ClassifierConfig,
    DeviceTable,
    LinearModel,
    accuracy,
    evaluate_by_device,
    featurize_for_classifier,
    grad_check,
    loss_and_grads,
    one_hot,
    predict,
    train,
)
from freqcenter.errors import ConfigError, DivergenceError
from freqcenter.norm import NormalizationConfig


def toy_separable(n=60, k=6, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, k))
    y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
    x[y == 1, 0] += 2.0
    x[y == 0, 0] -= 2.0
    return x, y


def random_model(n_classes=4, n_features=10, seed=0):
    rng = np.random.default_rng(seed)
    return LinearModel(
        rng.normal(0, 0.5, (n_classes, n_features)),
        rng.normal(0, 0.5, n_classes),
        np.arange(n_classes),
    )


class TestFeaturize:
    def test_flatten_length(self):
        x = np.zeros((1, 80, 96))
        assert featurize_for_classifier(x, "flatten", 4).shape == (80 * 24,)

    def test_flatten_pools_time(self):
        x = np.arange(8, dtype=np.float64).reshape(1, 1, 8)
        np.testing.assert_allclose(
            featurize_for_classifier(x, "flatten", 4), [1.5, 5.5]
        )

    def test_stats_constant_spec_zero_modulation(self):
        x = np.full((1, 80, 50), -30.0)
        vec = featurize_for_classifier(x, "stats")
        np.testing.assert_allclose(vec[:80], -30.0)
        np.testing.assert_allclose(vec[80:], 0.0)

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(0, 10, (1, 80, 96))
        np.testing.assert_array_equal(
            featurize_for_classifier(x, "flatten"), featurize_for_classifier(x.copy(), "flatten")
        )

    def test_too_short_for_pooling(self):
        with pytest.raises(ValueError):
            featurize_for_classifier(np.zeros((1, 80, 3)), "flatten", 4)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            featurize_for_classifier(np.zeros((1, 4, 8)), "pca")


class TestTrain:
    def test_separable_toy(self):
        x, y = toy_separable()
        model = train(x, y, ClassifierConfig(epochs=200, seed=0))
        assert accuracy(model, x, y) >= 0.99

    def test_zero_epochs_uniform(self):
        x, y = toy_separable()
        model = train(x, y, ClassifierConfig(epochs=0, seed=0))
        assert np.all(model.weights == 0.0)
        assert np.all(model.bias == 0.0)
        loss, _, _ = loss_and_grads(model, x, one_hot(y, model.classes), 0.0)
        assert abs(loss - np.log(2.0)) < 1e-12  # uniform softmax over 2 classes

    def test_loss_decreases(self):
        x, y = toy_separable(seed=3)
        model = train(x, y, ClassifierConfig(epochs=50, seed=1))
        assert all(np.isfinite(model.epoch_losses))
        assert model.epoch_losses[-1] < model.epoch_losses[0]

    def test_seeded_determinism(self):
        x, y = toy_separable(seed=4)
        m1 = train(x, y, ClassifierConfig(epochs=20, seed=5))
        m2 = train(x, y, ClassifierConfig(epochs=20, seed=5))
        np.testing.assert_array_equal(m1.weights, m2.weights)

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_divergence_detected(self):
        x, y = toy_separable(seed=6)
        with pytest.raises(DivergenceError):
            train(1e150 * x, y, ClassifierConfig(learning_rate=1e150, epochs=5, seed=0))

    def test_soft_labels(self):
        x, y = toy_separable(seed=7)
        soft = 0.9 * one_hot(y, np.array([0, 1])) + 0.05
        model = train(x, soft, ClassifierConfig(epochs=100, seed=2), classes=np.array([0, 1]))
        assert accuracy(model, x, y) >= 0.95
        with pytest.raises(ValueError):
            train(x, soft, ClassifierConfig(epochs=1))  # classes missing

    def test_empty_and_single_class(self):
        with pytest.raises(ValueError):
            train(np.zeros((0, 3)), np.array([]), ClassifierConfig())
        with pytest.raises(ValueError):
            train(np.ones((5, 3)), np.zeros(5), ClassifierConfig())


class TestGradCheck:
    def test_random_points(self):
        rng = np.random.default_rng(8)
        x = rng.normal(0, 1, (16, 10))
        y = one_hot(rng.integers(0, 4, 16), np.arange(4))
        for seed in range(10):
            model = random_model(seed=seed)
            rel = grad_check(model, x, y, l2=1e-4, seed=seed)
            assert rel < 1e-4

    def test_zero_weight_bias_gradient_closed_form(self):
        # at W = 0, b = 0: softmax is uniform, so grad_b = mean(1/C - y)
        n, c, k = 12, 3, 5
        rng = np.random.default_rng(9)
        x = rng.normal(0, 1, (n, k))
        labels = np.repeat(np.arange(c), n // c)
        y = one_hot(labels, np.arange(c))
        model = LinearModel(np.zeros((c, k)), np.zeros(c), np.arange(c))
        _, _, grad_b = loss_and_grads(model, x, y, 0.0)
        expected = (np.full((n, c), 1.0 / c) - y).mean(axis=0)
        np.testing.assert_allclose(grad_b, expected, atol=1e-12)
        # balanced batch: bias gradient vanishes
        np.testing.assert_allclose(grad_b, 0.0, atol=1e-12)

    def test_l2_gradient_linear_in_l2(self):
        model = random_model(seed=10)
        rng = np.random.default_rng(11)
        x = rng.normal(0, 1, (8, 10))
        y = one_hot(rng.integers(0, 4, 8), np.arange(4))
        _, g1, _ = loss_and_grads(model, x, y, 1e-3)
        _, g2, _ = loss_and_grads(model, x, y, 2e-3)
        np.testing.assert_allclose(g2 - g1, 1e-3 * model.weights, atol=1e-12)


class TestPredict:
    def test_bias_shift_invariance(self):
        model = random_model(seed=12)
        rng = np.random.default_rng(13)
        x = rng.normal(0, 2, (30, 10))
        before = predict(model, x)
        model.bias += 37.5
        np.testing.assert_array_equal(predict(model, x), before)

    def test_model_file_round_trip(self, tmp_path):
        model = random_model(seed=14)
        p = tmp_path / "model.json"
        model.save(p)
        back = LinearModel.load(p)
        np.testing.assert_allclose(back.weights, model.weights)
        np.testing.assert_allclose(back.bias, model.bias)
        np.testing.assert_array_equal(back.classes, model.classes)


class TestEvaluateByDevice:
    def test_table_shape_and_deltas(self, small_corpus):
        manifest, out = small_corpus
        from freqcenter.harness import _TensorCache, _prepare_features, _train_eval

        cache = _TensorCache(out)
        cfg = ClassifierConfig(epochs=40)
        prep = _prepare_features(manifest, cache, None, cfg)
        from freqcenter.classifier import train as clf_train

        model = clf_train(prep.train_x, prep.train_labels, cfg)
        table = evaluate_by_device(model, manifest, None, out, feature_mode=cfg.feature_mode)
        assert sorted(table.per_device) == ["A", "B", "C", "D"]
        assert 0.0 <= table.seen <= 1.0 and 0.0 <= table.unseen_avg <= 1.0
        assert table.delta_seen is None

        with_base = evaluate_by_device(
            model, manifest, NormalizationConfig("sfc", 0.9), out,
            feature_mode=cfg.feature_mode, baseline=table,
        )
        assert with_base.delta_seen == pytest.approx(with_base.seen - table.seen)
        assert with_base.delta_unseen == pytest.approx(
            with_base.unseen_avg - table.unseen_avg
        )

    def test_in_memory_matches_file_path(self, small_corpus):
        # the harness fast path and the file-based op must agree
        manifest, out = small_corpus
        from freqcenter.harness import _TensorCache, _prepare_features, _train_eval

        cache = _TensorCache(out)
        cfg = ClassifierConfig(epochs=40)
        norm = NormalizationConfig("sfc", 0.9)
        prep = _prepare_features(manifest, cache, norm, cfg)
        fast = _train_eval(prep, cfg, rep_seed=123)

        from freqcenter.classifier import train as clf_train
        from freqcenter.features import Standardizer
        from dataclasses import replace

        model = clf_train(prep.train_x, prep.train_labels, replace(cfg, seed=123))
        # reconstruct the standardizer the fast path fitted
        from freqcenter.harness import _fit_scalar_standardizer
        from freqcenter.norm import apply_norm

        train_t = [apply_norm(cache.tensor(e.path), norm) for e in manifest.split_entries("train")]
        std = _fit_scalar_standardizer(train_t)
        slow = evaluate_by_device(
            model, manifest, norm, out, feature_mode=cfg.feature_mode, standardizer=std
        )
        assert slow.per_device == fast.per_device
