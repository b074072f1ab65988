"""Training-time augmentations: gain, MixUp, SpecAugment.

All randomness flows through an explicit numpy Generator so augmented
pipelines stay reproducible.  Beta draws for MixUp are generated from two
Marsaglia-Tsang Gamma variates rather than a library call so the sampler
is identical wherever the package runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .features import Spectrogram, Waveform


@dataclass(frozen=True)
class MixupParams:
    p: float
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ConfigError("mixup p must be in [0, 1]")
        if self.alpha <= 0:
            raise ConfigError("mixup alpha must be positive")


@dataclass(frozen=True)
class SpecAugmentParams:
    max_freq_width: int = 30
    max_time_width: int = 192

    def __post_init__(self):
        if self.max_freq_width < 0 or self.max_time_width < 0:
            raise ConfigError("mask widths must be >= 0")


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = False
    gain_db_range: float = 7.0
    mixup_wave: MixupParams = field(default_factory=lambda: MixupParams(0.5, 2.0))
    mixup_spec: MixupParams = field(default_factory=lambda: MixupParams(1.0, 0.3))
    specaugment: SpecAugmentParams = field(default_factory=SpecAugmentParams)
    seed: int = 0


def gain(w: Waveform, db: float) -> Waveform:
    """Scale by 10^(db/20) and clamp to [-1, 1]."""
    if not math.isfinite(db):
        raise ValueError("gain must be finite")
    scaled = np.clip(w.samples * 10.0 ** (db / 20.0), -1.0, 1.0)
    return Waveform(scaled, w.sample_rate_hz)


def _gamma_mt(alpha: float, rng: np.random.Generator) -> float:
    """Gamma(alpha, 1) via Marsaglia-Tsang, boosted for alpha < 1."""
    if alpha < 1.0:
        return _gamma_mt(alpha + 1.0, rng) * rng.random() ** (1.0 / alpha)
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = (1.0 + c * x) ** 3
        if v <= 0.0:
            continue
        u = rng.random()
        if u < 1.0 - 0.0331 * x**4:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    """One draw from Beta(alpha, alpha) as g1 / (g1 + g2)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    g1 = _gamma_mt(alpha, rng)
    g2 = _gamma_mt(alpha, rng)
    return g1 / (g1 + g2)


def mixup(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """lam * a + (1 - lam) * b; mix label vectors with the same lam."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lam must be in [0, 1]")
    return lam * a + (1.0 - lam) * b


def spec_augment(
    spec: Spectrogram, params: SpecAugmentParams, rng: np.random.Generator
) -> Spectrogram:
    """Mask one frequency stripe and one time stripe with the mean value.

    Stripe widths are uniform over {0..max}, positions uniform over the
    valid offsets.
    """
    f, t = spec.n_mels, spec.n_frames
    if params.max_freq_width > f or params.max_time_width > t:
        raise ValueError("mask widths exceed spectrogram dimensions")
    x = spec.data.copy()
    fill = float(x.mean())
    w_f = int(rng.integers(0, params.max_freq_width + 1))
    w_t = int(rng.integers(0, params.max_time_width + 1))
    if w_f > 0:
        f0 = int(rng.integers(0, f - w_f + 1))
        x[0, f0 : f0 + w_f, :] = fill
    if w_t > 0:
        t0 = int(rng.integers(0, t - w_t + 1))
        x[0, :, t0 : t0 + w_t] = fill
    return Spectrogram(x, spec.config, spec.sample_rate_hz)


def augment_logmel_batch(tensors, soft_labels, cfg: AugmentConfig, rng: np.random.Generator):
    """Spectrogram-domain augmentation of a training batch.

    Applies a uniform dB offset (the log-domain equivalent of waveform
    gain), MixUp over log-mel tensors with labels mixed by the same
    coefficient, and SpecAugment stripes.  Waveform-level MixUp needs raw
    audio and is not part of this feature-file pipeline.
    """
    xs = [np.asarray(t, dtype=np.float64).copy() for t in tensors]
    ys = np.asarray(soft_labels, dtype=np.float64).copy()
    n = len(xs)
    for i in range(n):
        xs[i] += rng.uniform(-cfg.gain_db_range, cfg.gain_db_range)
    mixed_x, mixed_y = [], []
    for i in range(n):
        x, y = xs[i], ys[i]
        if rng.random() < cfg.mixup_spec.p:
            j = int(rng.integers(0, n))
            lam = sample_beta(cfg.mixup_spec.alpha, rng)
            x = mixup(x, xs[j], lam)
            y = mixup(y, ys[j], lam)
        mixed_x.append(x)
        mixed_y.append(y)
    out_x = []
    for x in mixed_x:
        spec = Spectrogram(x)
        out_x.append(spec_augment(spec, cfg.specaugment, rng).data)
    return out_x, np.stack(mixed_y)
