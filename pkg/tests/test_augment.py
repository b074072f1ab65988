import math

import numpy as np
import pytest

from freqcenter.augment import (
    AugmentConfig,
    MixupParams,
    SpecAugmentParams,
    augment_logmel_batch,
    gain,
    mixup,
    sample_beta,
    spec_augment,
)
from freqcenter.features import Spectrogram, Waveform, logmel


def small_wave(seed=0, n=16000, amp=0.05):
    rng = np.random.default_rng(seed)
    return Waveform(rng.uniform(-amp, amp, n))


class TestGain:
    def test_zero_db_identity(self):
        w = small_wave()
        np.testing.assert_array_equal(gain(w, 0.0).samples, w.samples)

    def test_doubling(self):
        # 10^(6.0206/20) = 2 (up to the dB rounding in the exponent)
        w = small_wave(1)
        out = gain(w, 6.0206)
        np.testing.assert_allclose(out.samples, 2.0 * w.samples, rtol=1e-5)

    def test_clamped(self):
        w = Waveform(np.array([0.5, -0.5]))
        out = gain(w, 20.0)
        np.testing.assert_array_equal(out.samples, [1.0, -1.0])

    def test_additive_pre_clamp(self):
        w = small_wave(2, amp=0.01)
        np.testing.assert_allclose(
            gain(gain(w, 3.0), 4.0).samples, gain(w, 7.0).samples, atol=1e-6
        )

    def test_logmel_shift(self):
        w = small_wave(3, amp=0.05)
        a = logmel(w).data
        b = logmel(gain(w, 5.0)).data
        mask = (a > -99.0) & (b > -99.0)
        np.testing.assert_allclose((b - a)[mask], 5.0, atol=1e-6)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            gain(small_wave(), math.inf)


class TestSampleBeta:
    @pytest.mark.parametrize("alpha", [0.3, 2.0])
    def test_symmetric_mean(self, alpha):
        rng = np.random.default_rng(10)
        draws = np.array([sample_beta(alpha, rng) for _ in range(100_000)])
        assert np.all((draws > 0.0) & (draws < 1.0))
        assert abs(draws.mean() - 0.5) < 0.01

    def test_variance_alpha_03(self):
        # Var Beta(a, a) = a^2 / ((2a)^2 (2a + 1)) = 0.15625 at a = 0.3
        rng = np.random.default_rng(11)
        draws = np.array([sample_beta(0.3, rng) for _ in range(100_000)])
        assert abs(draws.var() - 0.15625) < 0.01

    def test_seeded_determinism(self):
        a = [sample_beta(2.0, np.random.default_rng(5)) for _ in range(10)]
        b = [sample_beta(2.0, np.random.default_rng(5)) for _ in range(10)]
        assert a == b

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            sample_beta(0.0, np.random.default_rng(0))


class TestMixup:
    def test_lam_one_returns_a(self):
        rng = np.random.default_rng(12)
        a, b = rng.normal(0, 1, (2, 4, 5)), rng.normal(0, 1, (2, 4, 5))
        np.testing.assert_array_equal(mixup(a, b, 1.0), a)

    def test_symmetric_cancellation(self):
        x = np.random.default_rng(13).normal(0, 1, (3, 4))
        np.testing.assert_allclose(mixup(x, -x, 0.5), 0.0)

    def test_convex_envelope(self):
        rng = np.random.default_rng(14)
        a, b = rng.normal(0, 5, (6, 7)), rng.normal(0, 5, (6, 7))
        for lam in (0.0, 0.3, 0.7, 1.0):
            out = mixup(a, b, lam)
            assert np.all(out >= np.minimum(a, b) - 1e-12)
            assert np.all(out <= np.maximum(a, b) + 1e-12)

    def test_affine_identity(self):
        rng = np.random.default_rng(15)
        a, b = rng.normal(0, 2, (5, 5)), rng.normal(0, 2, (5, 5))
        np.testing.assert_allclose(mixup(a, b, 0.3) + mixup(b, a, 0.3), a + b, atol=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mixup(np.zeros((2, 3)), np.zeros((3, 2)), 0.5)


class TestSpecAugment:
    def spec(self, seed=0, f=80, t=197):
        rng = np.random.default_rng(seed)
        return Spectrogram(rng.normal(-30, 10, (1, f, t)))

    def test_zero_widths_identity(self):
        spec = self.spec()
        out = spec_augment(spec, SpecAugmentParams(0, 0), np.random.default_rng(1))
        np.testing.assert_array_equal(out.data, spec.data)

    def test_masked_cell_bound(self):
        spec = self.spec(2)
        params = SpecAugmentParams(30, 192)
        for seed in range(10):
            # replicate the width draws to compute the spec'd bound
            rng = np.random.default_rng(seed)
            out = spec_augment(spec, params, rng)
            rng2 = np.random.default_rng(seed)
            w_f = int(rng2.integers(0, params.max_freq_width + 1))
            w_t = int(rng2.integers(0, params.max_time_width + 1))
            changed = int((out.data != spec.data).sum())
            assert changed <= w_f * spec.n_frames + w_t * spec.n_mels

    def test_fill_is_mean_and_shape_kept(self):
        spec = self.spec(3)
        out = spec_augment(spec, SpecAugmentParams(30, 192), np.random.default_rng(7))
        assert out.data.shape == spec.data.shape
        changed = out.data != spec.data
        assert changed.any()
        np.testing.assert_allclose(out.data[changed], spec.data.mean())

    def test_seeded_determinism(self):
        spec = self.spec(4)
        a = spec_augment(spec, SpecAugmentParams(), np.random.default_rng(9))
        b = spec_augment(spec, SpecAugmentParams(), np.random.default_rng(9))
        np.testing.assert_array_equal(a.data, b.data)

    def test_width_precondition(self):
        spec = self.spec(5, f=20, t=50)
        with pytest.raises(ValueError):
            spec_augment(spec, SpecAugmentParams(30, 40), np.random.default_rng(0))


class TestBatchAugment:
    def test_deterministic_and_shapes(self):
        rng_data = np.random.default_rng(20)
        tensors = [rng_data.normal(-30, 8, (1, 80, 197)) for _ in range(6)]
        labels = np.eye(3)[[0, 1, 2, 0, 1, 2]]
        cfg = AugmentConfig(enabled=True, seed=1)
        x1, y1 = augment_logmel_batch(tensors, labels, cfg, np.random.default_rng(2))
        x2, y2 = augment_logmel_batch(tensors, labels, cfg, np.random.default_rng(2))
        assert len(x1) == 6
        for a, b in zip(x1, x2):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(y1, y2)
        np.testing.assert_allclose(y1.sum(axis=1), 1.0, atol=1e-9)

    def test_config_validation(self):
        with pytest.raises(Exception):
            MixupParams(1.5, 2.0)
        with pytest.raises(Exception):
            MixupParams(0.5, -1.0)
        with pytest.raises(Exception):
            SpecAugmentParams(-1, 0)
