"""Frequency-wise normalizations for (D, F, T) activation tensors.

All operations treat an activation tensor as token/channel x frequency x
time and compute statistics per frequency bin over the (D, T) axes.  The
centering variants subtract those statistics; the relaxed variants blend
the normalized tensor with the original via a coefficient lam in [0, 1].

Methods, as dispatched by apply_norm:

    none       identity
    fc         per-frequency centering
    sfc        lam * fc(x) + (1 - lam) * x
    sfcw       lam * ((x - mean_f) / (std_f + eps)) + (1 - lam) * x
    gfn        (x - mean_f) / std_f with statistics fitted on a training set
    ifn        per-sample per-frequency standardization
    layernorm  standardization over all cells of the sample
    rfn        lam * ifn(x) + (1 - lam) * layernorm(x)
    rfn_input  same tensor-level operation as rfn; tagged for input-only use
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ZeroVarianceError

DEFAULT_EPS = 1e-5

METHODS = ("none", "fc", "sfc", "sfcw", "gfn", "ifn", "layernorm", "rfn", "rfn_input")


def check_tensor(x: np.ndarray) -> np.ndarray:
    """Validate a (D, F, T) activation tensor and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"activation tensor must be rank 3, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"activation tensor dims must be >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("activation tensor contains non-finite values")
    return x


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not (0.0 <= lam <= 1.0):
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    return lam


@dataclass
class FreqStats:
    """Per-frequency mean/std fitted over a training set."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if not np.all(self.std > 0):
            raise ZeroVarianceError("all std entries must be positive")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean.tolist(), "std": self.std.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FreqStats":
        obj = json.loads(text)
        return cls(np.array(obj["mean"]), np.array(obj["std"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FreqStats":
        return cls.from_json(Path(path).read_text())


@dataclass
class NormalizationConfig:
    method: str = "none"
    lam: float = 0.9
    eps: float = DEFAULT_EPS
    fitted_stats: FreqStats | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown normalization method {self.method!r}")
        _check_lambda(self.lam)


def freq_mean(x: np.ndarray) -> np.ndarray:
    """Mean over (D, T) per frequency bin; shape (F,)."""
    return x.mean(axis=(0, 2))


def freq_std(x: np.ndarray) -> np.ndarray:
    """Population std over (D, T) per frequency bin; shape (F,)."""
    return x.std(axis=(0, 2))


def fc(x: np.ndarray) -> np.ndarray:
    """Frequency-wise centering: subtract each bin's mean over (D, T)."""
    x = check_tensor(x)
    return x - freq_mean(x)[None, :, None]


def sfc(x: np.ndarray, lam: float) -> np.ndarray:
    """Softened frequency-wise centering: lam * fc(x) + (1 - lam) * x."""
    lam = _check_lambda(lam)
    x = check_tensor(x)
    return x - lam * freq_mean(x)[None, :, None]


def sfcw(x: np.ndarray, lam: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Softened frequency-wise centering plus whitening."""
    lam = _check_lambda(lam)
    x = check_tensor(x)
    mu = freq_mean(x)[None, :, None]
    sigma = freq_std(x)[None, :, None]
    return lam * (x - mu) / (sigma + eps) + (1.0 - lam) * x


def ifn(x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Instance frequency-wise normalization: center and whiten per bin."""
    x = check_tensor(x)
    mu = freq_mean(x)[None, :, None]
    sigma = freq_std(x)[None, :, None]
    return (x - mu) / (sigma + eps)


def layer_norm_op(x: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Standardize over all D*F*T cells of the sample; no learned affine."""
    x = check_tensor(x)
    if x.size < 2:
        raise ValueError("layer norm needs at least 2 cells")
    return (x - x.mean()) / (x.std() + eps)


def rfn(x: np.ndarray, lam: float, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Relaxed mix lam * ifn(x) + (1 - lam) * layer_norm(x)."""
    lam = _check_lambda(lam)
    if lam == 1.0:
        return ifn(x, eps)
    if lam == 0.0:
        return layer_norm_op(x, eps)
    return lam * ifn(x, eps) + (1.0 - lam) * layer_norm_op(x, eps)


def gfn_fit(tensors) -> FreqStats:
    """Fit per-frequency mean/std pooled over all training cells.

    Accepts (D, F, T) arrays or objects with a `.data` tensor attribute
    (spectrograms).
    """
    mats = []
    for item in tensors:
        x = check_tensor(getattr(item, "data", item))
        # collapse (D, T) cells per frequency into columns
        mats.append(np.moveaxis(x, 1, 0).reshape(x.shape[1], -1))
    if not mats:
        raise ValueError("training set is empty")
    pooled = np.concatenate(mats, axis=1)
    var = pooled.var(axis=1)
    bad = np.where(var <= 0)[0]
    if bad.size:
        raise ZeroVarianceError(f"zero variance at frequency bins {bad.tolist()}")
    return FreqStats(pooled.mean(axis=1), np.sqrt(var))


def gfn_apply(x: np.ndarray, stats: FreqStats) -> np.ndarray:
    """Apply fitted global frequency normalization."""
    x = check_tensor(x)
    if stats.mean.size != x.shape[1]:
        raise ValueError(
            f"stats fitted for F={stats.mean.size}, tensor has F={x.shape[1]}"
        )
    return (x - stats.mean[None, :, None]) / stats.std[None, :, None]


def apply_norm(x: np.ndarray, cfg: NormalizationConfig) -> np.ndarray:
    """Dispatch to the configured normalization method."""
    if cfg.method == "none":
        return check_tensor(x)
    if cfg.method == "fc":
        return fc(x)
    if cfg.method == "sfc":
        return sfc(x, cfg.lam)
    if cfg.method == "sfcw":
        return sfcw(x, cfg.lam, cfg.eps)
    if cfg.method == "gfn":
        if cfg.fitted_stats is None:
            raise ConfigError("gfn requires fitted_stats")
        return gfn_apply(x, cfg.fitted_stats)
    if cfg.method == "ifn":
        return ifn(x, cfg.eps)
    if cfg.method == "layernorm":
        return layer_norm_op(x, cfg.eps)
    if cfg.method in ("rfn", "rfn_input"):
        return rfn(x, cfg.lam, cfg.eps)
    raise ConfigError(f"unknown normalization method {cfg.method!r}")
