"""
Exception hierarchy for SceneMix

Every error carries the exit code the command-line front end reports for it.
"""


class SceneMixError(Exception):
    """Base class for all SceneMix errors."""
    exit_code = 2


class UsageError(SceneMixError):
    """Missing, unknown or contradictory command-line flags."""
    exit_code = 1


class ConfigError(SceneMixError):
    """Invalid configuration value."""
    exit_code = 1


# ==================== DATA ERRORS ====================

class DataError(SceneMixError):
    """Input data could not be used."""
    exit_code = 2


class DecodeError(DataError):
    """Malformed RIFF/WAVE container."""

    def __init__(self, chunk: str, message: str):
        self.chunk = chunk
        super().__init__(f"malformed '{chunk}' chunk: {message}")


class UnsupportedFormatError(DataError):
    """Codec or bit depth the decoder does not handle."""


class TruncationError(DataError):
    """Data chunk shorter than its header declares."""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"truncated data chunk: expected {expected} bytes, got {actual}")


class TooShortError(DataError):
    """Signal or spectrogram too short to produce one frame or patch."""

    def __init__(self, what: str, required: int, actual: int):
        self.required = required
        self.actual = actual
        super().__init__(f"{what} too short: need {required}, got {actual}")


class ResolutionError(DataError):
    """Mel filterbank has an empty filter at the configured FFT resolution."""

    def __init__(self, index: int, n_mels: int, fft_size: int):
        self.index = index
        super().__init__(
            f"mel filter {index} is empty (n_mels={n_mels} too large for fft_size={fft_size})"
        )


class ShapeError(DataError):
    """Array shapes do not agree."""


class SpecError(DataError):
    """Network spec does not shape-check."""


class ManifestError(DataError):
    """Invalid manifest file."""


class FoldPlanError(DataError):
    """Invalid fold plan."""


class CheckpointError(DataError):
    """Corrupt or incompatible checkpoint file."""


class FingerprintMismatchError(DataError):
    """Feature or network fingerprint differs from the one expected."""

    def __init__(self, what: str, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} fingerprint mismatch: expected {expected}, got {actual}")


# ==================== NUMERIC ERRORS ====================

class NumericError(SceneMixError):
    """Non-finite loss or gradient during training."""
    exit_code = 3
