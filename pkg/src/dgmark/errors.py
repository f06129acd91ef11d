"""Exception types shared across the toolkit.

Every error raised by this package derives from :class:`DgmarkError`, so
callers can catch one type at a pipeline boundary and map it to an exit code.
"""

from __future__ import annotations


class DgmarkError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DgmarkError):
    """Invalid configuration: bad field values, impossible combinations."""


class InvalidVocabularyError(ConfigError):
    """Vocabulary too small or inconsistent between components."""


class InvalidTokenError(DgmarkError):
    """Token id outside the partition's vocabulary."""


class InvalidQueryError(DgmarkError):
    """A predictor was queried at a position that is not masked."""


class TrainingError(DgmarkError):
    """Count-model training got unusable input (e.g. an empty corpus)."""


class TruncationError(DgmarkError):
    """An operation needing full support got a truncated distribution."""


class DecodeError(DgmarkError):
    """Decoding aborted; ``step`` is the step index where it failed."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class InvalidInputError(DgmarkError):
    """Detector input unusable (e.g. an empty token sequence)."""


class InvalidWindowError(DgmarkError):
    """Window length exceeds the sequence length."""


class CalibrationInfeasibleError(DgmarkError):
    """No reachable threshold meets the target false positive rate.

    ``floor`` is the smallest achievable nonzero exceedance probability.
    """

    def __init__(self, message: str, floor: float):
        super().__init__(message)
        self.floor = floor


class DegenerateAttackError(DgmarkError):
    """Attack budget would destroy the sequence (e.g. delete everything)."""


class BridgeError(DgmarkError):
    """Bridge subprocess failed, died, or sent an invalid frame."""
