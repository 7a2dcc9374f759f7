"""Exception hierarchy shared across the engine."""


class FingerprintError(Exception):
    """Base class for operational errors (bad input data, corrupt files)."""


class AudioTooShortError(FingerprintError):
    pass


class EmptyInputError(FingerprintError):
    pass


class OffsetOutOfBoundsError(FingerprintError):
    """Shifted segment window falls outside the track; draw a new offset."""


class SilentSignalError(FingerprintError):
    pass


class FormatError(FingerprintError):
    """Malformed, truncated or checksum-failing file."""


class LocalizationFailedError(FingerprintError):
    """No candidate sequence reaches the consistency threshold."""

    def __init__(self, track_id, best_ratio):
        super().__init__(
            f"localization failed on track {track_id}: best consistency {best_ratio:.3f} < 0.5"
        )
        self.track_id = track_id
        self.best_ratio = best_ratio


class NumericalError(FingerprintError):
    pass


class ConfigError(Exception):
    """Invalid or inconsistent configuration (usage-level error)."""
