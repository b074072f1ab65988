"""Dimension-wise statistics and random-forest probing.

For an activation tensor (D, F, T) we extract its mean or population std
along one axis (marginalizing the other two) and train a random forest to
predict the recording device or the scene from those statistic vectors.
Accuracy per (network depth, axis, statistic, target) measures where in
the representation each kind of information lives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .errors import ConfigError
from .features import FeatureConfig, Spectrogram, read_feature_file
from .norm import apply_norm, check_tensor
from .synth import CorpusManifest, mix_seed
from .transformer import AstModel, forward_capture

AXES = ("frequency", "token", "time")
STATS = ("mean", "std")
TARGETS = ("device", "scene")

_AXIS_REDUCE = {"frequency": (0, 2), "token": (1, 2), "time": (0, 1)}


@dataclass
class StatVector:
    values: np.ndarray
    axis: str
    stat: str
    depth: int = 0


def extract_stats(x: np.ndarray, axis: str, stat: str, depth: int = 0) -> StatVector:
    """Statistic along one axis, marginalizing the other two.

    frequency -> length F, token -> length D, time -> length T.
    """
    x = check_tensor(x)
    if axis not in AXES:
        raise ConfigError(f"unknown axis {axis!r}")
    if stat not in STATS:
        raise ConfigError(f"unknown stat {stat!r}")
    reduce_axes = _AXIS_REDUCE[axis]
    values = x.mean(axis=reduce_axes) if stat == "mean" else x.std(axis=reduce_axes)
    # quantize away float64 summation dust: statistics that cancel exactly
    # (e.g. frequency means after centering) must not leave a residual for
    # a downstream classifier to fit
    return StatVector(np.round(values, 9), axis, stat, depth)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")


@dataclass
class Forest:
    trees: list
    classes: np.ndarray
    n_features: int


def rf_train(features, labels, cfg: ForestConfig) -> Forest:
    """Bagged CART trees with Gini splits.

    Each tree considers floor(sqrt(n_features)) features per node and is
    grown on a bootstrap resample (unless bootstrap is disabled).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("features must be a non-empty (n_samples, n_features) matrix")
    y = np.asarray(labels)
    if y.shape[0] != x.shape[0]:
        raise ValueError("feature/label count mismatch")
    classes, y_idx = np.unique(y, return_inverse=True)

    n = x.shape[0]
    max_features = max(1, int(np.sqrt(x.shape[1])))
    rng = np.random.default_rng(cfg.seed)
    trees = []
    for _ in range(cfg.n_trees):
        idx = rng.integers(0, n, n) if cfg.bootstrap else np.arange(n)
        tree = DecisionTreeClassifier(
            criterion="gini",
            max_depth=cfg.max_depth,
            min_samples_split=cfg.min_samples_split,
            max_features=max_features,
            random_state=int(rng.integers(0, 2**31 - 1)),
        )
        tree.fit(x[idx], y_idx[idx])
        trees.append(tree)
    return Forest(trees, classes, x.shape[1])


def _vote(forest: Forest, x: np.ndarray) -> np.ndarray:
    counts = np.zeros((forest.classes.size, x.shape[0]), dtype=int)
    cols = np.arange(x.shape[0])
    for tree in forest.trees:
        # trees were fit on class indices; map their output back to columns
        pred = tree.predict(x).astype(int)
        counts[pred, cols] += 1
    # np.argmax resolves ties toward the lowest class index
    return counts.argmax(axis=0)


def rf_predict(forest: Forest, feature_vector) -> object:
    """Majority vote over trees; ties go to the lowest class index."""
    x = np.asarray(feature_vector, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {x.shape[1]}")
    return forest.classes[_vote(forest, x)[0]]


def rf_accuracy(forest: Forest, features, labels) -> float:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != forest.n_features:
        raise ValueError("feature matrix does not match the trained forest")
    y = np.asarray(labels)
    pred = forest.classes[_vote(forest, x)]
    return float(np.mean(pred == y))


@dataclass
class ProbeRow:
    depth: int
    axis: str
    stat: str
    target: str
    accuracy: float
    n_train: int
    n_test: int


@dataclass
class ProbeReport:
    rows: list = field(default_factory=list)

    def accuracy(self, depth: int, axis: str, stat: str, target: str) -> float:
        for r in self.rows:
            if (r.depth, r.axis, r.stat, r.target) == (depth, axis, stat, target):
                return r.accuracy
        raise KeyError((depth, axis, stat, target))

    def depths(self):
        return sorted({r.depth for r in self.rows})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["depth", "axis", "stat", "target", "accuracy", "n_train", "n_test"])
            for r in self.rows:
                w.writerow(
                    [r.depth, r.axis, r.stat, r.target, f"{r.accuracy:.4f}", r.n_train, r.n_test]
                )


def probe_split(entries):
    """Deterministic stratified halves of the test entries.

    The corpus train split holds a single device, so probes train on the
    device- and scene-balanced test portion: within every (scene, device)
    cell the first half of the clips trains the forest and the second
    half evaluates it.
    """
    cells = {}
    for e in entries:
        cells.setdefault((e.scene_id, e.device_id), []).append(e)
    train, test = [], []
    for key in sorted(cells):
        clips = cells[key]
        half = len(clips) // 2
        train.extend(clips[:half])
        test.extend(clips[half:])
    return train, test


def probe_experiment(
    manifest: CorpusManifest,
    corpus_dir,
    model: AstModel | None,
    norm_cfg=None,
    forest_cfg: ForestConfig | None = None,
    placement: str = "input",
) -> ProbeReport:
    """Device/scene predictability per depth, axis and statistic.

    Depth 0 is the (optionally normalized) input spectrogram; depths
    1..n_blocks are the transformer activations.  The token axis is
    skipped at depth 0 because the input has a single channel.  With
    placement "tokens" or "all_blocks" the normalization runs inside the
    forward pass instead of on the spectrogram.
    """
    forest_cfg = forest_cfg or ForestConfig()
    corpus_dir = Path(corpus_dir)
    feat_cfg = FeatureConfig(**manifest.config["features"])
    train_entries, test_entries = probe_split(manifest.split_entries("test"))
    ordered = train_entries + test_entries
    n_train = len(train_entries)

    input_norm = norm_cfg if (norm_cfg is not None and placement == "input") else None
    hidden_norm = None
    if norm_cfg is not None and placement in ("tokens", "all_blocks"):
        hidden_norm = lambda t: apply_norm(t, norm_cfg)

    n_depths = 1 + (len(model.blocks) if model is not None else 0)
    feats = {}  # (depth, axis, stat) -> list of vectors
    for e in ordered:
        x = read_feature_file(corpus_dir / e.path)
        if input_norm is not None:
            x = apply_norm(x, input_norm)
        tensors = [x]
        if model is not None:
            spec = Spectrogram(x, feat_cfg, manifest.config["sample_rate_hz"])
            tensors.extend(
                forward_capture(
                    model,
                    spec,
                    hidden_norm=hidden_norm,
                    hidden_placement=placement if hidden_norm is not None else "none",
                )
            )
        for depth, tensor in enumerate(tensors):
            for axis in AXES:
                if depth == 0 and axis == "token":
                    continue
                for stat in STATS:
                    sv = extract_stats(tensor, axis, stat, depth)
                    feats.setdefault((depth, axis, stat), []).append(sv.values)

    device_labels = np.array([e.device_id for e in ordered])
    scene_labels = np.array([e.scene_id for e in ordered])
    report = ProbeReport()
    cell = 0
    for depth in range(n_depths):
        for axis in AXES:
            if depth == 0 and axis == "token":
                continue
            for stat in STATS:
                x = np.stack(feats[(depth, axis, stat)])
                for target, labels in (("device", device_labels), ("scene", scene_labels)):
                    cfg = replace(forest_cfg, seed=mix_seed(forest_cfg.seed, cell))
                    forest = rf_train(x[:n_train], labels[:n_train], cfg)
                    acc = rf_accuracy(forest, x[n_train:], labels[n_train:])
                    report.rows.append(
                        ProbeRow(depth, axis, stat, target, acc, n_train, len(ordered) - n_train)
                    )
                    cell += 1
    return report
