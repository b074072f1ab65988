"""Linear scene classifier trained with hand-written gradients.

Multinomial logistic regression on vectorized spectrograms, optimized by
seeded mini-batch gradient descent on the softmax cross-entropy with L2
weight decay.  Gradients are derived analytically and validated against
central finite differences (grad_check), which is the numeric gate for
the whole module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError
from .features import read_feature_file
from .norm import NormalizationConfig, apply_norm
from .synth import CorpusManifest

FEATURE_MODES = ("flatten", "stats")


@dataclass(frozen=True)
class ClassifierConfig:
    learning_rate: float = 0.05
    epochs: int = 200
    batch_size: int = 32
    l2: float = 1e-4
    seed: int = 0
    feature_mode: str = "flatten"
    pool_factor: int = 4

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("learning rate, epochs and batch size must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")
        if self.pool_factor < 1:
            raise ConfigError("pool_factor must be >= 1")


@dataclass
class LinearModel:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    classes: np.ndarray
    epoch_losses: list = field(default_factory=list)

    def save(self, path) -> None:
        doc = {
            "n_classes": int(self.weights.shape[0]),
            "n_features": int(self.weights.shape[1]),
            "classes": np.asarray(self.classes).tolist(),
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "LinearModel":
        doc = json.loads(Path(path).read_text())
        w = np.array(doc["weights"]).reshape(doc["n_classes"], doc["n_features"])
        return cls(w, np.array(doc["bias"]), np.array(doc["classes"]))


def featurize_for_classifier(
    tensor: np.ndarray, mode: str = "stats", pool_factor: int = 4
) -> np.ndarray:
    """Vectorize a (1, F, T) log-mel tensor.

    flatten: mean-pool the time axis by pool_factor, then flatten F x T'.
    stats:   per-band temporal mean concatenated with per-band temporal
             std (the modulation energy of each band).
    """
    x = np.asarray(tensor, dtype=np.float64)
    if x.ndim == 3:
        x = x[0]
    f, t = x.shape
    if mode == "flatten":
        if t < pool_factor:
            raise ValueError(f"T={t} too short for pooling factor {pool_factor}")
        t_p = t // pool_factor
        pooled = x[:, : t_p * pool_factor].reshape(f, t_p, pool_factor).mean(axis=2)
        return pooled.ravel()
    if mode == "stats":
        return np.concatenate([x.mean(axis=1), x.std(axis=1)])
    raise ConfigError(f"unknown feature mode {mode!r}")


def one_hot(labels, classes) -> np.ndarray:
    classes = np.asarray(classes)
    idx = np.searchsorted(classes, labels)
    y = np.zeros((len(labels), classes.size))
    y[np.arange(len(labels)), idx] = 1.0
    return y


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grads(model: LinearModel, x: np.ndarray, y: np.ndarray, l2: float):
    """Mean softmax cross-entropy with (l2/2)*||W||^2, plus its gradients.

    y may be one-hot or soft (rows summing to 1).
    """
    n = x.shape[0]
    p = _softmax(x @ model.weights.T + model.bias)
    ce = -np.sum(y * np.log(np.maximum(p, 1e-300))) / n
    loss = ce + 0.5 * l2 * np.sum(model.weights**2)
    delta = (p - y) / n
    grad_w = delta.T @ x + l2 * model.weights
    grad_b = delta.sum(axis=0)
    return loss, grad_w, grad_b


def train(features, labels, cfg: ClassifierConfig, classes=None) -> LinearModel:
    """Mini-batch gradient descent from a zero-initialized model.

    labels is either a 1-D array of class labels or, with `classes`
    given, a 2-D matrix of soft targets (rows summing to 1, e.g. from
    MixUp).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("features must be a non-empty (n_samples, n_features) matrix")
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if classes is None:
            raise ValueError("soft labels need an explicit class list")
        classes = np.asarray(classes)
        y = labels.astype(np.float64)
    else:
        classes = np.unique(labels)
        y = one_hot(labels, classes)
    if classes.size < 2:
        raise ValueError("need at least 2 classes")

    model = LinearModel(np.zeros((classes.size, x.shape[1])), np.zeros(classes.size), classes)
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            _, grad_w, grad_b = loss_and_grads(model, x[batch], y[batch], cfg.l2)
            model.weights -= cfg.learning_rate * grad_w
            model.bias -= cfg.learning_rate * grad_b
        epoch_loss, _, _ = loss_and_grads(model, x, y, cfg.l2)
        if not np.isfinite(epoch_loss):
            raise DivergenceError("training loss is non-finite; reduce the learning rate")
        model.epoch_losses.append(float(epoch_loss))
    return model


def predict(model: LinearModel, features) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return model.classes[np.argmax(x @ model.weights.T + model.bias, axis=1)]


def accuracy(model: LinearModel, features, labels) -> float:
    return float(np.mean(predict(model, features) == np.asarray(labels)))


def grad_check(
    model: LinearModel,
    features,
    labels_onehot,
    l2: float = 1e-4,
    n_coords: int = 100,
    h: float = 1e-4,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random subset of parameter coordinates."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.atleast_2d(np.asarray(labels_onehot, dtype=np.float64))
    _, grad_w, grad_b = loss_and_grads(model, x, y, l2)
    analytic = np.concatenate([grad_w.ravel(), grad_b.ravel()])

    rng = np.random.default_rng(seed)
    coords = rng.choice(analytic.size, size=min(n_coords, analytic.size), replace=False)
    w_size = model.weights.size
    max_rel = 0.0
    for c in coords:
        if c < w_size:
            target, idx = model.weights, np.unravel_index(c, model.weights.shape)
        else:
            target, idx = model.bias, (c - w_size,)
        orig = target[idx]
        target[idx] = orig + h
        up, _, _ = loss_and_grads(model, x, y, l2)
        target[idx] = orig - h
        down, _, _ = loss_and_grads(model, x, y, l2)
        target[idx] = orig
        numeric = (up - down) / (2.0 * h)
        rel = abs(analytic[c] - numeric) / max(abs(analytic[c]), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel


@dataclass
class DeviceTable:
    per_device: dict  # device_id -> accuracy
    seen: float
    unseen_avg: float
    delta_seen: float | None = None
    delta_unseen: float | None = None


def evaluate_by_device(
    model: LinearModel,
    manifest: CorpusManifest,
    norm_cfg: NormalizationConfig | None,
    corpus_dir,
    feature_mode: str = "stats",
    pool_factor: int = 4,
    standardizer=None,
    baseline: DeviceTable | None = None,
    cache: dict | None = None,
) -> DeviceTable:
    """Test-split accuracy per recording device.

    The seen accuracy is the seen device's accuracy; unseen_avg averages
    the remaining devices.  Deltas are computed against a supplied
    baseline table (typically the no-normalization row).  A dict cache
    maps relative paths to already-loaded tensors.
    """
    corpus_dir = Path(corpus_dir)
    seen_ids = {d.device_id for d in manifest.devices if d.seen}
    correct = {d.device_id: 0 for d in manifest.devices}
    total = {d.device_id: 0 for d in manifest.devices}
    for e in manifest.split_entries("test"):
        if cache is not None and e.path in cache:
            x = cache[e.path]
        else:
            x = read_feature_file(corpus_dir / e.path)
            if cache is not None:
                cache[e.path] = x
        if norm_cfg is not None:
            x = apply_norm(x, norm_cfg)
        if standardizer is not None:
            x = (x - standardizer.mean) / standardizer.std
        vec = featurize_for_classifier(x, feature_mode, pool_factor)
        pred = predict(model, vec)[0]
        total[e.device_id] += 1
        correct[e.device_id] += int(pred == e.scene_id)

    per_device = {d: correct[d] / total[d] for d in sorted(total) if total[d]}
    seen = float(np.mean([a for d, a in per_device.items() if d in seen_ids]))
    unseen = float(np.mean([a for d, a in per_device.items() if d not in seen_ids]))
    table = DeviceTable(per_device, seen, unseen)
    if baseline is not None:
        table.delta_seen = seen - baseline.seen
        table.delta_unseen = unseen - baseline.unseen_avg
    return table
