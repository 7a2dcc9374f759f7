"""Noise- and reverberation-robust audio fingerprinting.

A residual CNN with spectral-temporal attention maps 960 ms log-mel segments
to unit-norm subfingerprints; a multi-probe LSH index over those vectors
answers short queries with a track id and a timestamp.
"""
from .config import (
    AugmentConfig,
    EncoderConfig,
    EngineConfig,
    FrontendConfig,
    LshConfig,
    TrainConfig,
)
from .errors import ConfigError, FingerprintError, FormatError, LocalizationFailedError

__all__ = [
    "AugmentConfig",
    "ConfigError",
    "EncoderConfig",
    "EngineConfig",
    "FingerprintError",
    "FormatError",
    "FrontendConfig",
    "LocalizationFailedError",
    "LshConfig",
    "TrainConfig",
]
__version__ = "0.1.0"
