"""Experiment harness and CLI.

Subcommands:

    freqcenter synth     --config c.json --out dir [--seed N]
    freqcenter probe     --config c.json --out dir [--seed N]
    freqcenter table     --config c.json --out dir [--seed N]
    freqcenter sweep     --config c.json --out dir [--seed N]
    freqcenter placement --config c.json --out dir [--seed N]

synth renders the corpus into the output directory; the other commands
read that corpus and write one CSV each (probe_report.csv,
device_table.csv, lambda_sweep.csv, placement.csv).  Every command is
deterministic given (config, seed).  Exit codes: 0 success, 1 usage
error, 2 I/O error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import classifier as clf
from .errors import ConfigError, CorpusError, DivergenceError, ZeroVarianceError
from .features import FeatureConfig, Standardizer, fit_standardizer, read_feature_file
from .norm import FreqStats, NormalizationConfig, apply_norm, gfn_fit
from .probe import ForestConfig, probe_experiment
from .synth import CorpusManifest, SynthConfig, generate_corpus, mix_seed
from .transformer import AstConfig, init_model

PLACEMENTS = ("input", "tokens", "all_blocks")

LAMBDA_GRID = [round(0.1 * i, 1) for i in range(11)]
N_REPS = 3

# index spaces for seeds derived from the master seed
_REP_SEED_BASE = 10_000
_PROBE_SEED_BASE = 20_000


@dataclass
class ExperimentConfig:
    corpus: SynthConfig = field(default_factory=SynthConfig)
    normalization: NormalizationConfig = field(
        default_factory=lambda: NormalizationConfig("sfc", 0.9)
    )
    placement: str = "input"
    ast: AstConfig = field(default_factory=AstConfig)
    classifier: clf.ClassifierConfig = field(default_factory=clf.ClassifierConfig)
    augment: aug.AugmentConfig = field(default_factory=aug.AugmentConfig)
    output_dir: str | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}")


def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {sorted(unknown)}")


def _build(cls, obj: dict, where: str, aliases: dict | None = None):
    aliases = aliases or {}
    obj = {aliases.get(k, k): v for k, v in obj.items()}
    names = [f.name for f in fields(cls)]
    _check_keys(obj, names, where)
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where}: {exc}") from exc


def _default_time_patches(corpus: SynthConfig, patch: int) -> int:
    sr = corpus.sample_rate_hz
    n = int(round(corpus.clip_seconds * sr))
    frames = (n - corpus.features.window_samples(sr)) // corpus.features.hop_samples(sr) + 1
    return max(1, frames // patch)


def load_config(path=None) -> ExperimentConfig:
    """Build an ExperimentConfig from a JSON file; unknown keys rejected."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _check_keys(
        doc,
        ["corpus", "features", "normalization", "placement", "ast", "classifier",
         "augment", "output_dir", "master_seed"],
        "config",
    )

    feat = _build(FeatureConfig, doc.get("features", {}), "features")
    corpus_obj = dict(doc.get("corpus", {}))
    if "device_ids" in corpus_obj:
        corpus_obj["device_ids"] = tuple(corpus_obj["device_ids"])
    _check_keys(
        corpus_obj,
        [f.name for f in fields(SynthConfig) if f.name != "features"],
        "corpus",
    )
    corpus = SynthConfig(**corpus_obj, features=feat)

    norm = _build(
        NormalizationConfig, doc.get("normalization", {}), "normalization",
        aliases={"lambda": "lam"},
    )

    ast_obj = dict(doc.get("ast", {}))
    _check_keys(ast_obj, [f.name for f in fields(AstConfig)], "ast")
    patch = ast_obj.get("patch", 16)
    ast_obj.setdefault("freq_patches", max(1, feat.n_mels // patch))
    ast_obj.setdefault("time_patches", _default_time_patches(corpus, patch))
    ast_cfg = AstConfig(**ast_obj)

    classifier_cfg = _build(clf.ClassifierConfig, doc.get("classifier", {}), "classifier")

    aug_obj = dict(doc.get("augment", {}))
    _check_keys(aug_obj, [f.name for f in fields(aug.AugmentConfig)], "augment")
    for key, sub in (("mixup_wave", aug.MixupParams), ("mixup_spec", aug.MixupParams),
                     ("specaugment", aug.SpecAugmentParams)):
        if key in aug_obj:
            aug_obj[key] = _build(sub, aug_obj[key], f"augment.{key}")
    augment_cfg = aug.AugmentConfig(**aug_obj)

    return ExperimentConfig(
        corpus=corpus,
        normalization=norm,
        placement=doc.get("placement", "input"),
        ast=ast_cfg,
        classifier=classifier_cfg,
        augment=augment_cfg,
        output_dir=doc.get("output_dir"),
        master_seed=int(doc.get("master_seed", 0)),
    )


def _load_manifest(out_dir: Path, seed: int) -> CorpusManifest:
    manifest_path = out_dir / "manifest.json"
    if not manifest_path.exists():
        raise CorpusError(
            f"no corpus found at {out_dir} (missing manifest.json); run `freqcenter synth` first"
        )
    manifest = CorpusManifest.load(manifest_path)
    if manifest.master_seed != seed:
        raise CorpusError(
            f"corpus at {out_dir} was generated with seed {manifest.master_seed}, "
            f"but this run uses seed {seed}; rerun synth"
        )
    return manifest


class _TensorCache(dict):
    def __init__(self, corpus_dir: Path):
        super().__init__()
        self.corpus_dir = corpus_dir

    def tensor(self, rel_path: str) -> np.ndarray:
        if rel_path not in self:
            full = self.corpus_dir / rel_path
            if not full.exists():
                raise CorpusError(f"missing feature file: {full}")
            self[rel_path] = read_feature_file(full)
        return self[rel_path]


def _resolve_norm(norm: NormalizationConfig, train_tensors) -> NormalizationConfig:
    """Fit global frequency statistics when the method needs them."""
    if norm.method == "gfn" and norm.fitted_stats is None:
        return replace(norm, fitted_stats=gfn_fit(train_tensors))
    return norm


def _fit_scalar_standardizer(tensors) -> Standardizer:
    cells = np.concatenate([t.ravel() for t in tensors])
    var = float(np.var(cells))
    if var <= 0:
        raise ZeroVarianceError("training features have zero variance")
    return Standardizer(float(np.mean(cells)), float(np.sqrt(var)))


def _classifier_cell(
    manifest: CorpusManifest,
    cache: _TensorCache,
    norm: NormalizationConfig | None,
    clf_cfg: clf.ClassifierConfig,
    augment_cfg: aug.AugmentConfig,
    rep_seed: int,
):
    """Train on the seen-device split and evaluate per device."""
    train_entries = manifest.split_entries("train")
    train_x = [cache.tensor(e.path) for e in train_entries]
    if norm is not None:
        train_x = [apply_norm(t, norm) for t in train_x]
    scene_labels = np.array([e.scene_id for e in train_entries])

    std = _fit_scalar_standardizer(train_x)
    train_x = [(t - std.mean) / std.std for t in train_x]

    cfg = replace(clf_cfg, seed=rep_seed)
    classes = np.unique(scene_labels)
    if augment_cfg.enabled:
        rng = np.random.default_rng(mix_seed(augment_cfg.seed, rep_seed))
        soft = clf.one_hot(scene_labels, classes)
        train_x, soft = aug.augment_logmel_batch(train_x, soft, augment_cfg, rng)
        feats = np.stack(
            [clf.featurize_for_classifier(t, cfg.feature_mode, cfg.pool_factor) for t in train_x]
        )
        model = clf.train(feats, soft, cfg, classes=classes)
    else:
        feats = np.stack(
            [clf.featurize_for_classifier(t, cfg.feature_mode, cfg.pool_factor) for t in train_x]
        )
        model = clf.train(feats, scene_labels, cfg)

    return clf.evaluate_by_device(
        model, manifest, norm, cache.corpus_dir,
        feature_mode=cfg.feature_mode, pool_factor=cfg.pool_factor,
        standardizer=std, cache=cache,
    )


def _mean_std(values) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class _PreparedFeatures:
    train_x: np.ndarray
    train_labels: np.ndarray
    test_x: np.ndarray
    test_scenes: np.ndarray
    test_devices: np.ndarray
    seen_ids: set


def _prepare_features(manifest, cache, norm, clf_cfg) -> _PreparedFeatures:
    """Normalize, standardize and featurize both splits once."""

    def pipeline(entries, std=None):
        tensors = [cache.tensor(e.path) for e in entries]
        if norm is not None:
            tensors = [apply_norm(t, norm) for t in tensors]
        if std is None:
            std = _fit_scalar_standardizer(tensors)
        feats = np.stack(
            [
                clf.featurize_for_classifier(
                    (t - std.mean) / std.std, clf_cfg.feature_mode, clf_cfg.pool_factor
                )
                for t in tensors
            ]
        )
        return feats, std

    train_entries = manifest.split_entries("train")
    test_entries = manifest.split_entries("test")
    train_x, std = pipeline(train_entries)
    test_x, _ = pipeline(test_entries, std)
    return _PreparedFeatures(
        train_x,
        np.array([e.scene_id for e in train_entries]),
        test_x,
        np.array([e.scene_id for e in test_entries]),
        np.array([e.device_id for e in test_entries]),
        {d.device_id for d in manifest.devices if d.seen},
    )


def _train_eval(prep: _PreparedFeatures, clf_cfg, rep_seed: int) -> clf.DeviceTable:
    model = clf.train(prep.train_x, prep.train_labels, replace(clf_cfg, seed=rep_seed))
    pred = clf.predict(model, prep.test_x)
    correct = pred == prep.test_scenes
    per_device = {
        d: float(correct[prep.test_devices == d].mean())
        for d in sorted(set(prep.test_devices))
    }
    seen = float(np.mean([a for d, a in per_device.items() if d in prep.seen_ids]))
    unseen = float(np.mean([a for d, a in per_device.items() if d not in prep.seen_ids]))
    return clf.DeviceTable(per_device, seen, unseen)


def _repeat_cells(manifest, cache, norm, cfg: ExperimentConfig, master_seed: int):
    """Run the classifier N_REPS times with derived training seeds.

    Features are identical across repetitions (only the training seed
    varies), so they are prepared once unless augmentation is on.
    """
    rep_seeds = [mix_seed(master_seed, _REP_SEED_BASE + rep) for rep in range(N_REPS)]
    if cfg.augment.enabled:
        return [
            _classifier_cell(manifest, cache, norm, cfg.classifier, cfg.augment, s)
            for s in rep_seeds
        ]
    prep = _prepare_features(manifest, cache, norm, cfg.classifier)
    return [_train_eval(prep, cfg.classifier, s) for s in rep_seeds]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return f"{x:.4f}"


def cmd_synth(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    manifest = generate_corpus(cfg.corpus, seed, out_dir)
    n_train = len(manifest.split_entries("train"))
    n_test = len(manifest.split_entries("test"))
    print(f"corpus written to {out_dir}: {n_train} train + {n_test} test clips")
    return out_dir / "manifest.json"


def cmd_probe(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    manifest = _load_manifest(out_dir, seed)
    cache = _TensorCache(out_dir)
    model = init_model(cfg.ast)
    forest_cfg = ForestConfig(seed=mix_seed(seed, _PROBE_SEED_BASE))

    runs = [("none", None)]
    if cfg.normalization.method != "none":
        train_x = [cache.tensor(e.path) for e in manifest.split_entries("train")]
        runs.append((cfg.normalization.method, _resolve_norm(cfg.normalization, train_x)))

    out_path = out_dir / "probe_report.csv"
    rows = []
    for label, norm in runs:
        report = probe_experiment(
            manifest, out_dir, model, norm, forest_cfg, placement=cfg.placement
        )
        for r in report.rows:
            rows.append(
                [label, r.depth, r.axis, r.stat, r.target, _fmt(r.accuracy), r.n_train, r.n_test]
            )
    _write_csv(
        out_path,
        ["normalization", "depth", "axis", "stat", "target", "accuracy", "n_train", "n_test"],
        rows,
    )
    print(f"probe report written to {out_path}")
    return out_path


def _table_row_configs(cfg: ExperimentConfig, manifest, cache):
    """The method rows of the device table.

    Fixed rows mirror the headline comparison (no normalization, global
    frequency normalization, relaxed input normalization at its best
    lambda, softened centering at 0.4/0.9/1.0, center+whiten at its best
    lambda)."""
    train_x = [cache.tensor(e.path) for e in manifest.split_entries("train")]
    gfn_cfg = _resolve_norm(NormalizationConfig("gfn"), train_x)

    def best_lambda(method: str):
        best = None
        for lam in LAMBDA_GRID:
            norm = NormalizationConfig(method, lam)
            tables = _repeat_cells(manifest, cache, norm, cfg, cfg.master_seed)
            unseen, _ = _mean_std([t.unseen_avg for t in tables])
            if best is None or unseen > best[1]:
                best = (lam, unseen, tables)
        return best[0], best[2]

    rows = []
    rows.append(("baseline", 0.0, _repeat_cells(manifest, cache, None, cfg, cfg.master_seed)))
    rows.append(("gfn", None, _repeat_cells(manifest, cache, gfn_cfg, cfg, cfg.master_seed)))
    lam, tables = best_lambda("rfn_input")
    rows.append(("rfn_input", lam, tables))
    for lam in (0.4, 0.9, 1.0):
        norm = NormalizationConfig("sfc", lam)
        rows.append(("sfc", lam, _repeat_cells(manifest, cache, norm, cfg, cfg.master_seed)))
    lam, tables = best_lambda("sfcw")
    rows.append(("sfcw", lam, tables))
    return rows


def cmd_table(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    cfg = replace(cfg, master_seed=seed)
    manifest = _load_manifest(out_dir, seed)
    cache = _TensorCache(out_dir)
    device_ids = sorted(d.device_id for d in manifest.devices)

    rows = _table_row_configs(cfg, manifest, cache)
    baseline_tables = rows[0][2]
    base_seen, _ = _mean_std([t.seen for t in baseline_tables])
    base_unseen, _ = _mean_std([t.unseen_avg for t in baseline_tables])

    out_rows = []
    for method, lam, tables in rows:
        seen_m, seen_s = _mean_std([t.seen for t in tables])
        unseen_m, unseen_s = _mean_std([t.unseen_avg for t in tables])
        per_dev = [
            _fmt(float(np.mean([t.per_device[d] for t in tables]))) for d in device_ids
        ]
        out_rows.append(
            [method, "-" if lam is None else _fmt(lam)]
            + per_dev
            + [_fmt(seen_m), _fmt(seen_s), _fmt(unseen_m), _fmt(unseen_s),
               _fmt(seen_m - base_seen), _fmt(unseen_m - base_unseen)]
        )

    out_path = out_dir / "device_table.csv"
    _write_csv(
        out_path,
        ["method", "lambda"] + [f"acc_{d}" for d in device_ids]
        + ["seen_mean", "seen_std", "unseen_mean", "unseen_std", "delta_seen", "delta_unseen"],
        out_rows,
    )
    print(f"device table written to {out_path}")
    return out_path


def cmd_sweep(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    cfg = replace(cfg, master_seed=seed)
    manifest = _load_manifest(out_dir, seed)
    cache = _TensorCache(out_dir)

    out_rows = []
    for lam in LAMBDA_GRID:
        norm = None if lam == 0.0 else NormalizationConfig("sfc", lam)
        tables = _repeat_cells(manifest, cache, norm, cfg, seed)
        seen_m, _ = _mean_std([t.seen for t in tables])
        unseen_m, unseen_s = _mean_std([t.unseen_avg for t in tables])
        out_rows.append([_fmt(lam), _fmt(seen_m), _fmt(unseen_m), _fmt(unseen_s)])

    out_path = out_dir / "lambda_sweep.csv"
    _write_csv(out_path, ["lambda", "seen", "unseen", "seed_std"], out_rows)
    print(f"lambda sweep written to {out_path}")
    return out_path


def cmd_placement(cfg: ExperimentConfig, out_dir: Path, seed: int) -> Path:
    manifest = _load_manifest(out_dir, seed)
    cache = _TensorCache(out_dir)
    model = init_model(cfg.ast)
    forest_cfg = ForestConfig(seed=mix_seed(seed, _PROBE_SEED_BASE))

    norm = cfg.normalization
    if norm.method == "none":
        raise ConfigError("placement comparison needs a normalization method")
    train_x = [cache.tensor(e.path) for e in manifest.split_entries("train")]
    norm = _resolve_norm(norm, train_x)

    final_depth = cfg.ast.n_blocks
    out_rows = []
    for placement in PLACEMENTS:
        report = probe_experiment(manifest, out_dir, model, norm, forest_cfg, placement=placement)
        depth0_device = report.accuracy(0, "frequency", "mean", "device")
        final_device = max(
            r.accuracy for r in report.rows if r.depth == final_depth and r.target == "device"
        )
        final_scene = max(
            r.accuracy for r in report.rows if r.depth == final_depth and r.target == "scene"
        )
        out_rows.append(
            [placement, _fmt(depth0_device), _fmt(final_device), _fmt(final_scene)]
        )

    out_path = out_dir / "placement.csv"
    _write_csv(
        out_path,
        ["placement", "depth0_device_acc", "final_device_acc", "final_scene_acc"],
        out_rows,
    )
    print(f"placement report written to {out_path}")
    return out_path


_COMMANDS = {
    "synth": cmd_synth,
    "probe": cmd_probe,
    "table": cmd_table,
    "sweep": cmd_sweep,
    "placement": cmd_placement,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="freqcenter",
        description="Frequency-wise normalization experiments on a synthetic corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        p.add_argument("--seed", type=int, help="master seed (overrides config master_seed)")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0

    try:
        cfg = load_config(args.config)
        out = args.out or cfg.output_dir
        if out is None:
            print("error: no output directory (pass --out or set output_dir)", file=sys.stderr)
            return 1
        seed = args.seed if args.seed is not None else cfg.master_seed
        _COMMANDS[args.command](cfg, Path(out), seed)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CorpusError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ZeroVarianceError, DivergenceError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
