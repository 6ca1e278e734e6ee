"""Exception taxonomy. CLI exit codes map onto these families."""

from __future__ import annotations


class DpSynthError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DpSynthError):
    """Invalid configuration or arguments (CLI exit code 2)."""


class CorpusError(DpSynthError):
    """Malformed corpus data or violated corpus invariants."""


class EmbeddingFormatError(DpSynthError):
    """Unreadable embedding file."""


class BadMagicError(EmbeddingFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(EmbeddingFormatError):
    """File ends before the declared payload is complete."""


class PayloadSizeError(EmbeddingFormatError):
    """Declared count/dim disagree with the payload size."""


class AlignmentError(DpSynthError):
    """Embedding matrix does not align with the corpus it claims to describe."""


class InfeasiblePlanError(DpSynthError):
    """Selection plan demands more samples than a cluster holds (CLI exit code 3).

    Carries the per-cluster deficit vector so callers can size a regenerated
    initial pool.
    """

    def __init__(self, deficits):
        self.deficits = deficits
        super().__init__("Need more initial samples.")


class AccountingError(DpSynthError):
    """Privacy accounting failure."""


class UnboundedEpsilonError(AccountingError):
    """Requested delta is not achievable at any finite epsilon."""


class GridMismatchError(AccountingError):
    """Privacy loss distributions with incompatible grid spacing."""


class CalibrationError(AccountingError):
    """Noise calibration could not bracket or reach the target."""


class StaleInputError(DpSynthError):
    """A pipeline stage input does not match the manifest hash of its producer."""


class ExternalServiceError(DpSynthError):
    """A remote endpoint failed persistently (CLI exit code 4)."""
