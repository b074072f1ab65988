"""Log-mel feature extraction.

Mono waveforms are turned into log-mel spectrograms via a Hann-windowed
STFT, a triangular mel filter bank and a dB conversion.  A scalar
standardizer fitted on a training set is provided for the usual
mean/variance normalization, and spectrograms can be written to and read
from a compact binary feature file ("FQC1").
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateFilterError,
    EmptyWavError,
    MalformedWavError,
    UnsupportedWavError,
    ZeroVarianceError,
)

DEFAULT_SAMPLE_RATE = 16000

FEATURE_FILE_MAGIC = b"FQC1"


@dataclass
class Waveform:
    """Mono audio signal with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D signal")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    """STFT / mel filter bank parameters.

    Defaults: 1024-point FFT, 40 ms Hann windows with a 10 ms hop, 80 mel
    filters spanning 0-8000 Hz, dB floor of 1e-10 in the power domain.
    """

    fft_size: int = 1024
    window_ms: float = 40.0
    hop_ms: float = 10.0
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-10

    def window_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.window_ms * sample_rate_hz / 1000.0))

    def hop_samples(self, sample_rate_hz: int) -> int:
        return int(round(self.hop_ms * sample_rate_hz / 1000.0))

    def validate(self, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> None:
        if self.fft_size <= 0 or self.fft_size % 2 != 0:
            raise ConfigError("fft_size must be a positive even integer")
        if self.window_samples(sample_rate_hz) > self.fft_size:
            raise ConfigError("window length exceeds fft_size")
        if self.window_samples(sample_rate_hz) <= 0 or self.hop_samples(sample_rate_hz) <= 0:
            raise ConfigError("window and hop must be positive")
        if self.fmax_hz > sample_rate_hz / 2:
            raise ConfigError("fmax_hz exceeds the Nyquist frequency")
        if not (0 <= self.fmin_hz < self.fmax_hz):
            raise ConfigError("need 0 <= fmin_hz < fmax_hz")
        if self.n_mels < 2:
            raise ConfigError("n_mels must be >= 2")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")


@dataclass
class Spectrogram:
    """Log-mel spectrogram in dB, stored as a (1, F, T) tensor."""

    data: np.ndarray
    config: FeatureConfig = field(default_factory=FeatureConfig)
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3 or self.data.shape[0] != 1:
            raise ValueError("spectrogram data must have shape (1, F, T)")
        if self.data.shape[1] == 0 or self.data.shape[2] == 0:
            raise ValueError("spectrogram must have F > 0 and T > 0")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_mels(self) -> int:
        return self.data.shape[1]

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Standardizer:
    """Scalar mean/std fitted on a training set of spectrograms."""

    mean: float
    std: float

    def __post_init__(self):
        if not (self.std > 0):
            raise ZeroVarianceError("standardizer std must be positive")


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE file containing 16-bit PCM mono audio.

    Samples are scaled by 1/32768 into [-1, 1).  Raises MalformedWavError
    for a broken container, UnsupportedWavError for anything that is not
    16-bit PCM mono, and EmptyWavError for a zero-length data chunk.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedWavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            if len(body) < chunk_size:
                raise MalformedWavError(f"{path}: truncated data chunk")
            data = body
        # chunks are word-aligned
        pos += 8 + chunk_size + (chunk_size % 2)

    if fmt is None or data is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")

    audio_format, n_channels, sample_rate, _, _, bits = fmt
    if audio_format != 1 or bits != 16:
        raise UnsupportedWavError(
            f"{path}: only 16-bit PCM supported (format={audio_format}, bits={bits})"
        )
    if n_channels != 1:
        raise UnsupportedWavError(f"{path}: only mono supported ({n_channels} channels)")
    if len(data) == 0:
        raise EmptyWavError(f"{path}: data chunk is empty")

    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, sample_rate)


def write_wav(path, w: Waveform) -> None:
    """Write a Waveform as 16-bit PCM mono (inverse of read_wav)."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, w.sample_rate_hz, w.sample_rate_hz * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(data))
    Path(path).write_bytes(header + data)


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window of the given length."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def stft_power(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """Power spectrogram, shape (fft_size/2 + 1, T).

    Frames start at sample 0 and advance by the hop; each frame is
    multiplied by a periodic Hann window and zero-padded to fft_size.
    A trailing partial frame is dropped.
    """
    cfg.validate(w.sample_rate_hz)
    win_len = cfg.window_samples(w.sample_rate_hz)
    hop = cfg.hop_samples(w.sample_rate_hz)
    x = w.samples
    if x.size < win_len:
        raise ValueError(
            f"waveform has {x.size} samples, shorter than one window ({win_len})"
        )
    n_frames = (x.size - win_len) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = x[starts[:, None] + np.arange(win_len)[None, :]]
    frames = frames * hann_window(win_len)[None, :]
    spectrum = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def hz_to_mel(f):
    """HTK mel scale: m(f) = 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_corner_bins(cfg: FeatureConfig, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """FFT-bin indices of the n_mels + 2 triangle corner points.

    Corner frequencies are equally spaced on the mel scale between fmin
    and fmax and snapped to the nearest FFT bin center.
    """
    mel_pts = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    return np.round(hz_pts * cfg.fft_size / sample_rate_hz).astype(int)


def mel_filterbank(cfg: FeatureConfig, sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filter bank, shape (n_mels, fft_size/2 + 1).

    Each filter rises linearly from corner b to a peak of 1 at corner b+1
    and falls back to 0 at corner b+2.
    """
    cfg.validate(sample_rate_hz)
    corners = mel_corner_bins(cfg, sample_rate_hz)
    n_bins = cfg.fft_size // 2 + 1
    fb = np.zeros((cfg.n_mels, n_bins))
    for b in range(cfg.n_mels):
        left, center, right = corners[b], corners[b + 1], corners[b + 2]
        if left == center or center == right:
            raise DegenerateFilterError(
                f"mel filter {b} is degenerate (corner bins {left}, {center}, {right})"
            )
        up = np.arange(left, center + 1)
        fb[b, up] = (up - left) / (center - left)
        down = np.arange(center, right + 1)
        fb[b, down] = (right - down) / (right - center)
        fb[b, center] = 1.0
    return fb


def mel_power(w: Waveform, cfg: FeatureConfig) -> np.ndarray:
    """Mel-domain power, shape (n_mels, T)."""
    return mel_filterbank(cfg, w.sample_rate_hz) @ stft_power(w, cfg)


def power_to_db(p: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    """10 * log10(max(p, log_floor))."""
    return 10.0 * np.log10(np.maximum(p, log_floor))


def logmel(w: Waveform, cfg: FeatureConfig | None = None) -> Spectrogram:
    """Log-mel spectrogram in dB, shape (1, n_mels, T)."""
    cfg = cfg or FeatureConfig()
    db = power_to_db(mel_power(w, cfg), cfg.log_floor)
    return Spectrogram(db[None, :, :], cfg, w.sample_rate_hz)


def fit_standardizer(spectrograms) -> Standardizer:
    """Scalar mean/std pooled over all cells of all training spectrograms."""
    specs = list(spectrograms)
    if not specs:
        raise ValueError("need at least one spectrogram to fit a standardizer")
    cells = np.concatenate([s.data.ravel() for s in specs])
    mean = float(np.mean(cells))
    var = float(np.var(cells))
    if var <= 0.0:
        raise ZeroVarianceError("training spectrograms have zero pooled variance")
    return Standardizer(mean, float(np.sqrt(var)))


def apply_standardizer(s: Standardizer, spec: Spectrogram) -> Spectrogram:
    return Spectrogram((spec.data - s.mean) / s.std, spec.config, spec.sample_rate_hz)


def write_feature_file(path, data: np.ndarray) -> None:
    """Write a (D, F, T) tensor as magic "FQC1", D/F/T as u32 LE, then
    float32 LE cells in (d, f, t) row-major order."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError("feature data must be rank 3 (D, F, T)")
    d, f, t = data.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_FILE_MAGIC)
        fh.write(struct.pack("<III", d, f, t))
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_feature_file(path) -> np.ndarray:
    """Read an FQC1 feature file back into a float64 (D, F, T) tensor."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_FILE_MAGIC:
        raise ValueError(f"{path}: not an FQC1 feature file")
    d, f, t = struct.unpack_from("<III", raw, 4)
    if len(raw) < 16 + 4 * d * f * t:
        raise ValueError(f"{path}: truncated feature file")
    cells = np.frombuffer(raw, dtype="<f4", count=d * f * t, offset=16)
    return cells.astype(np.float64).reshape(d, f, t)
