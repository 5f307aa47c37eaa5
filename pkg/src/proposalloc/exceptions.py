from __future__ import annotations

from typing import ClassVar


class ProposalLocException(Exception):
    """Base Exception."""

    code: ClassVar[str] = "ERROR"
    exit_code: ClassVar[int] = 1


class ConfigError(ProposalLocException):
    """Raised when the run configuration or command-line is invalid."""

    code = "CONFIG_INVALID"
    exit_code = 2


class MissingInput(ProposalLocException):
    """Raised when an input file or an upstream artifact is missing."""

    code = "MISSING_INPUT"
    exit_code = 3


class ComputationError(ProposalLocException):
    """Base Exception for errors raised while computing."""

    code = "COMPUTATION_ERROR"
    exit_code = 4


class InvalidData(ComputationError):
    """Raised when a value violates the invariants of its type."""

    code = "INVALID_DATA"


class ConstantMap(ComputationError):
    """Raised when a map has no spread to threshold."""

    code = "CONSTANT_MAP"


class NonPositiveSigma(ComputationError):
    code = "NONPOSITIVE_SIGMA"


class ChannelMismatch(ComputationError):
    code = "CHANNEL_MISMATCH"


class EmptyDataset(ComputationError):
    code = "EMPTY_DATASET"


class LabelOutOfRange(ComputationError):
    code = "LABEL_OUT_OF_RANGE"


class KOutOfRange(ComputationError):
    code = "K_OUT_OF_RANGE"


class EmptyPool(ComputationError):
    """Raised when an image has no proposal to work with."""

    code = "EMPTY_POOL"


class NoBackground(ComputationError):
    """Raised when the proposal boxes cover the whole image."""

    code = "NO_BACKGROUND"


class Overlap(ComputationError):
    code = "OVERLAP"


class OutOfBounds(ComputationError):
    code = "OUT_OF_BOUNDS"


class DimensionMismatch(ComputationError):
    code = "DIMENSION_MISMATCH"


class AllUnknown(ComputationError):
    """Raised when a pseudo-label mask has no labeled pixel."""

    code = "ALL_UNKNOWN"


class MissingMask(ComputationError):
    code = "MISSING_MASK"


class MissingGtBox(ComputationError):
    code = "MISSING_GT_BOX"


class ShortPredictionList(ComputationError):
    code = "SHORT_PREDICTION_LIST"
