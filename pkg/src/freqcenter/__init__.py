"""Frequency-wise spectrogram normalizations and a synthetic
device-mismatch experiment harness."""

from .features import (
    FeatureConfig,
    Spectrogram,
    Standardizer,
    Waveform,
    apply_standardizer,
    fit_standardizer,
    logmel,
    mel_filterbank,
    read_feature_file,
    read_wav,
    stft_power,
    write_feature_file,
)
from .norm import (
    FreqStats,
    NormalizationConfig,
    apply_norm,
    fc,
    gfn_apply,
    gfn_fit,
    ifn,
    layer_norm_op,
    rfn,
    sfc,
    sfcw,
)
from .synth import CorpusManifest, DeviceSpec, SceneSpec, SynthConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "FeatureConfig",
    "Spectrogram",
    "Standardizer",
    "Waveform",
    "apply_standardizer",
    "fit_standardizer",
    "logmel",
    "mel_filterbank",
    "read_feature_file",
    "read_wav",
    "stft_power",
    "write_feature_file",
    "FreqStats",
    "NormalizationConfig",
    "apply_norm",
    "fc",
    "gfn_apply",
    "gfn_fit",
    "ifn",
    "layer_norm_op",
    "rfn",
    "sfc",
    "sfcw",
    "CorpusManifest",
    "DeviceSpec",
    "SceneSpec",
    "SynthConfig",
    "generate_corpus",
    "__version__",
]
