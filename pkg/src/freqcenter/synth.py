"""Synthetic device-mismatch corpus.

Scenes are built from amplitude-modulated sinusoids placed at mel-band
center frequencies plus a scene-specific static spectral tilt, so scene
identity is carried both by stationary spectral shape and by temporal
modulation structure.  Recording devices are per-mel-band gain curves
applied multiplicatively in the mel power domain, which makes the device
an exact per-frequency offset in the log domain.

Every clip is rendered from a seed derived from (master_seed, clip index)
with a fixed 64-bit mixing function, so corpora are reproducible and
clips are independent of generation order.  Test clips are parallel
recordings: the same clean content is rendered once per device.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorpusError
from .features import (
    FeatureConfig,
    Waveform,
    mel_corner_bins,
    mel_filterbank,
    power_to_db,
    stft_power,
    write_feature_file,
)

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# index spaces for derived seeds: clip content vs device gain draws
_DEVICE_SEED_BASE = 1 << 48


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixing function."""
    z = (x + _GOLDEN) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def mix_seed(master_seed: int, index: int) -> int:
    """Derive an independent 64-bit seed for one unit of work."""
    return splitmix64((master_seed & _M64) ^ (((index + 1) * _GOLDEN) & _M64))


@dataclass(frozen=True)
class BandPattern:
    """Amplitude-modulated group of adjacent mel bands."""

    band_lo: int
    band_hi: int  # exclusive
    rate_hz: float
    depth: float
    level_db: float


@dataclass
class SceneSpec:
    scene_id: int
    band_patterns: list
    static_tilt: np.ndarray

    def __post_init__(self):
        self.static_tilt = np.asarray(self.static_tilt, dtype=np.float64)
        n_mels = self.static_tilt.size
        for p in self.band_patterns:
            if not (0 <= p.band_lo < p.band_hi <= n_mels):
                raise ConfigError(f"pattern bands [{p.band_lo}, {p.band_hi}) out of range")
            if p.rate_hz <= 0:
                raise ConfigError("modulation rate must be positive")
            if not (0.0 <= p.depth <= 1.0):
                raise ConfigError("modulation depth must be in [0, 1]")


@dataclass
class DeviceSpec:
    device_id: str
    band_gain_db: np.ndarray
    seen: bool = False

    def __post_init__(self):
        self.band_gain_db = np.asarray(self.band_gain_db, dtype=np.float64)
        if not np.all(np.isfinite(self.band_gain_db)):
            raise ConfigError("device gains must be finite")


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 5
    device_ids: tuple = ("A", "B", "C", "D")
    train_clips_per_scene: int = 40
    test_clips_per_scene_device: int = 20
    clip_seconds: float = 2.0
    sample_rate_hz: int = 16000
    n_device_groups: int = 8
    gain_range_db: float = 12.0
    min_device_separation_db: float = 3.0
    # per-clip relative jitter of modulation depth/rate and additive dB
    # jitter of pattern levels; blurs the scene cues within each class
    depth_jitter: float = 0.4
    rate_jitter: float = 0.25
    level_jitter_db: float = 1.5
    features: FeatureConfig = field(default_factory=FeatureConfig)

    def validate(self) -> None:
        if not (2 <= self.n_scenes <= len(_SCENE_TABLE)):
            raise ConfigError(f"n_scenes must be in [2, {len(_SCENE_TABLE)}]")
        if len(self.device_ids) < 2 or self.device_ids[0] != "A":
            raise ConfigError("need device A (seen) plus at least one unseen device")
        if self.train_clips_per_scene < 1 or self.test_clips_per_scene_device < 1:
            raise ConfigError("clip counts must be positive")
        if self.clip_seconds * self.sample_rate_hz < self.features.fft_size:
            raise ConfigError("clips must span at least one FFT window")
        self.features.validate(self.sample_rate_hz)


@dataclass
class ManifestEntry:
    clip_id: str
    scene_id: int
    device_id: str
    split: str
    path: str


@dataclass
class CorpusManifest:
    entries: list
    master_seed: int
    config: dict
    devices: list

    def split_entries(self, split: str):
        return [e for e in self.entries if e.split == split]

    def save(self, path) -> None:
        doc = {
            "master_seed": self.master_seed,
            "config": self.config,
            "devices": [
                {
                    "device_id": d.device_id,
                    "seen": d.seen,
                    "band_gain_db": [round(float(g), 6) for g in d.band_gain_db],
                }
                for d in self.devices
            ],
            "entries": [asdict(e) for e in self.entries],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise CorpusError(f"manifest not found: {path}") from exc
        devices = [
            DeviceSpec(d["device_id"], np.array(d["band_gain_db"]), d["seen"])
            for d in doc["devices"]
        ]
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        return cls(entries, doc["master_seed"], doc["config"], devices)


# Scene table: (tilt shape, character patterns).  All scenes share the
# same four band ranges (quarters of the mel axis); what distinguishes
# them is the static tilt (a crisp, device-fragile cue) and the per-range
# modulation depth/rate (a device-robust but noisy cue, blurred further
# by per-clip jitter).  Band ranges are fractions of n_mels so the table
# works for any filter count.  Each scene additionally gets a full-range
# unmodulated floor pattern so every mel band carries energy well above
# the dB floor.
_SCENE_TABLE = (
    ("slope_down", ((0.00, 0.25, 2.0, 0.8, 0.0), (0.25, 0.50, 5.0, 0.3, -3.0),
                    (0.50, 0.75, 3.0, 0.5, -2.0), (0.75, 1.00, 7.0, 0.2, -6.0))),
    ("slope_up", ((0.00, 0.25, 3.0, 0.6, -2.0), (0.25, 0.50, 2.0, 0.5, 0.0),
                  (0.50, 0.75, 6.0, 0.3, -4.0), (0.75, 1.00, 4.0, 0.4, -3.0))),
    ("bump_mid", ((0.00, 0.25, 5.0, 0.3, -4.0), (0.25, 0.50, 4.0, 0.7, -1.0),
                  (0.50, 0.75, 2.0, 0.6, 0.0), (0.75, 1.00, 6.0, 0.3, -4.0))),
    ("notch_mid", ((0.00, 0.25, 6.0, 0.4, -3.0), (0.25, 0.50, 7.0, 0.4, -4.0),
                   (0.50, 0.75, 4.0, 0.8, -1.0), (0.75, 1.00, 2.0, 0.6, 0.0))),
    ("two_humps", ((0.00, 0.25, 4.0, 0.5, -1.0), (0.25, 0.50, 3.0, 0.6, -2.0),
                   (0.50, 0.75, 7.0, 0.4, -3.0), (0.75, 1.00, 5.0, 0.8, -2.0))),
)

_FLOOR_LEVEL_DB = -25.0
_TILT_SCALE_DB = 4.0


def _scene_tilt(shape: str, n_mels: int) -> np.ndarray:
    u = np.linspace(0.0, 1.0, n_mels)
    if shape == "slope_down":
        return _TILT_SCALE_DB * (1.0 - 2.0 * u)
    if shape == "slope_up":
        return _TILT_SCALE_DB * (2.0 * u - 1.0)
    if shape == "bump_mid":
        return 1.25 * _TILT_SCALE_DB * np.exp(-(((u - 0.5) / 0.18) ** 2))
    if shape == "notch_mid":
        return -1.25 * _TILT_SCALE_DB * np.exp(-(((u - 0.5) / 0.18) ** 2))
    if shape == "two_humps":
        return _TILT_SCALE_DB * (
            np.exp(-(((u - 0.25) / 0.12) ** 2)) + np.exp(-(((u - 0.75) / 0.12) ** 2)) - 0.5
        )
    raise ConfigError(f"unknown tilt shape {shape!r}")


def default_scenes(cfg: SynthConfig) -> list:
    """Build the deterministic scene definitions for this config."""
    n_mels = cfg.features.n_mels
    scenes = []
    for sid in range(cfg.n_scenes):
        shape, patterns = _SCENE_TABLE[sid]
        band_patterns = [BandPattern(0, n_mels, 0.5, 0.0, _FLOOR_LEVEL_DB)]
        for lo, hi, rate, depth, level in patterns:
            band_patterns.append(
                BandPattern(int(round(lo * n_mels)), int(round(hi * n_mels)), rate, depth, level)
            )
        scenes.append(SceneSpec(sid, band_patterns, _scene_tilt(shape, n_mels)))
    return scenes


def draw_devices(cfg: SynthConfig, master_seed: int) -> list:
    """Draw per-device gain curves, redrawing until all pairs are at least
    min_device_separation_db apart in L-infinity distance."""
    n_mels = cfg.features.n_mels
    group_edges = np.linspace(0, n_mels, cfg.n_device_groups + 1).astype(int)
    attempt = 0
    while True:
        rng = np.random.default_rng(mix_seed(master_seed, _DEVICE_SEED_BASE + attempt))
        gains = []
        for _ in cfg.device_ids:
            g = rng.uniform(-cfg.gain_range_db, cfg.gain_range_db, cfg.n_device_groups)
            curve = np.repeat(g, np.diff(group_edges))
            gains.append(curve)
        ok = all(
            np.max(np.abs(gains[i] - gains[j])) >= cfg.min_device_separation_db
            for i in range(len(gains))
            for j in range(i + 1, len(gains))
        )
        if ok:
            return [
                DeviceSpec(dev_id, curve, seen=(dev_id == "A"))
                for dev_id, curve in zip(cfg.device_ids, gains)
            ]
        attempt += 1


def render_clean_waveform(
    scene: SceneSpec,
    clip_seed: int,
    cfg: SynthConfig | None = None,
) -> Waveform:
    """Render one clip of a scene with random per-band sinusoid phases.

    Each band pattern contributes one sinusoid per mel band, placed at the
    band's center FFT bin, amplitude-shaped by the pattern level and the
    scene tilt, and multiplied by the pattern's modulation envelope.  The
    result is peak-normalized to 0.5.
    """
    cfg = cfg or SynthConfig()
    fc = cfg.features
    n_samples = int(round(cfg.clip_seconds * cfg.sample_rate_hz))
    centers = mel_corner_bins(fc, cfg.sample_rate_hz)[1 : fc.n_mels + 1]
    t = np.arange(n_samples) / cfg.sample_rate_hz
    rng = np.random.default_rng(clip_seed)

    out = np.zeros(n_samples)
    n_reps = -(-n_samples // fc.fft_size)  # ceil
    for p in scene.band_patterns:
        bands = np.arange(p.band_lo, p.band_hi)
        phases = rng.uniform(0.0, 2.0 * np.pi, bands.size)
        depth = min(1.0, p.depth * rng.uniform(1.0 - cfg.depth_jitter, 1.0 + cfg.depth_jitter))
        rate = p.rate_hz * rng.uniform(1.0 - cfg.rate_jitter, 1.0 + cfg.rate_jitter)
        level = p.level_db + rng.uniform(-cfg.level_jitter_db, cfg.level_jitter_db)
        amps = 10.0 ** ((level + scene.static_tilt[bands]) / 20.0)
        spectrum = np.zeros(fc.fft_size // 2 + 1, dtype=np.complex128)
        spectrum[centers[bands]] = amps * np.exp(1j * phases)
        # one FFT period of sum_k a_k cos(2 pi k n / N + phi_k), then tiled
        period = np.fft.irfft(spectrum, n=fc.fft_size) * (fc.fft_size / 2.0)
        carrier = np.tile(period, n_reps)[:n_samples]
        envelope = 1.0 - depth * 0.5 * (1.0 - np.cos(2.0 * np.pi * rate * t))
        out += carrier * envelope

    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.5 / peak
    return Waveform(out, cfg.sample_rate_hz)


def apply_device(mel_power: np.ndarray, dev: DeviceSpec) -> np.ndarray:
    """Multiply each mel band by the device gain (power domain)."""
    mel_power = np.asarray(mel_power, dtype=np.float64)
    if mel_power.ndim != 2 or mel_power.shape[0] != dev.band_gain_db.size:
        raise ValueError(
            f"mel power shape {mel_power.shape} does not match device with "
            f"{dev.band_gain_db.size} bands"
        )
    return mel_power * (10.0 ** (dev.band_gain_db / 10.0))[:, None]


def clean_mel_power(scene: SceneSpec, clip_seed: int, cfg: SynthConfig) -> np.ndarray:
    """Device-free mel power (F, T) for one clip."""
    w = render_clean_waveform(scene, clip_seed, cfg)
    return mel_filterbank(cfg.features, cfg.sample_rate_hz) @ stft_power(w, cfg.features)


def generate_corpus(cfg: SynthConfig, master_seed: int, out_dir) -> CorpusManifest:
    """Render the full corpus to out_dir and write manifest.json.

    Train clips exist for the seen device only; test clips are parallel
    recordings of shared content under every device.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    try:
        feat_dir.mkdir(parents=True, exist_ok=True)
        probe_path = feat_dir / ".write_probe"
        probe_path.write_bytes(b"")
        probe_path.unlink()
    except OSError as exc:
        raise CorpusError(f"output directory not writable: {out_dir}") from exc

    scenes = default_scenes(cfg)
    devices = draw_devices(cfg, master_seed)
    seen_dev = devices[0]
    fb = mel_filterbank(cfg.features, cfg.sample_rate_hz)
    entries = []

    def write_clip(power, scene, dev, clip_id, split):
        db = power_to_db(apply_device(power, dev), cfg.features.log_floor)
        rel = f"features/{clip_id}.fqc"
        write_feature_file(out_dir / rel, db[None, :, :])
        entries.append(ManifestEntry(clip_id, scene.scene_id, dev.device_id, split, rel))

    content_idx = 0
    for scene in scenes:
        for j in range(cfg.train_clips_per_scene):
            w = render_clean_waveform(scene, mix_seed(master_seed, content_idx), cfg)
            power = fb @ stft_power(w, cfg.features)
            clip_id = f"train_s{scene.scene_id}_c{j:03d}_{seen_dev.device_id}"
            write_clip(power, scene, seen_dev, clip_id, "train")
            content_idx += 1

    for scene in scenes:
        for j in range(cfg.test_clips_per_scene_device):
            w = render_clean_waveform(scene, mix_seed(master_seed, content_idx), cfg)
            power = fb @ stft_power(w, cfg.features)
            for dev in devices:
                clip_id = f"test_s{scene.scene_id}_c{j:03d}_{dev.device_id}"
                write_clip(power, scene, dev, clip_id, "test")
            content_idx += 1

    manifest = CorpusManifest(
        entries=entries,
        master_seed=master_seed,
        config={
            "n_scenes": cfg.n_scenes,
            "device_ids": list(cfg.device_ids),
            "train_clips_per_scene": cfg.train_clips_per_scene,
            "test_clips_per_scene_device": cfg.test_clips_per_scene_device,
            "clip_seconds": cfg.clip_seconds,
            "sample_rate_hz": cfg.sample_rate_hz,
            "n_device_groups": cfg.n_device_groups,
            "gain_range_db": cfg.gain_range_db,
            "min_device_separation_db": cfg.min_device_separation_db,
            "features": asdict(cfg.features),
        },
        devices=devices,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
