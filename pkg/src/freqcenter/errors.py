"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, I/O problems -> 2,
numeric failures -> 3.
"""


class FreqCenterError(Exception):
    pass


class ConfigError(FreqCenterError, ValueError):
    """Invalid configuration value or unknown config key."""


class MalformedWavError(FreqCenterError, ValueError):
    """File is not a parseable RIFF/WAVE container."""


class UnsupportedWavError(FreqCenterError, ValueError):
    """WAV file is valid but not 16-bit PCM mono."""


class EmptyWavError(FreqCenterError, ValueError):
    """WAV data chunk contains no samples."""


class DegenerateFilterError(FreqCenterError, ValueError):
    """A mel filter collapsed onto a single FFT bin."""


class ZeroVarianceError(FreqCenterError, ValueError):
    """Statistics cannot be fit because the pooled variance is zero."""


class DivergenceError(FreqCenterError, RuntimeError):
    """Training produced a non-finite loss."""


class CorpusError(FreqCenterError, OSError):
    """Corpus files are missing or unreadable."""
