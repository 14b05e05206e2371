"""Exception types raised by the acpp library."""

from typing import Optional, Tuple


class AcppError(Exception):
    """Base class for all library errors."""


class TensorShapeError(AcppError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConstructionError(AcppError, ValueError):
    """A tensor, model or config could not be constructed from the given values."""


class UnsupportedOperationError(AcppError, ValueError):
    """The operation is valid in general but not supported here (e.g. even kernels)."""


class ContractError(AcppError, ValueError):
    """A caller broke an operation's precondition."""


class GradientCheckError(AcppError, RuntimeError):
    """The loss builder handed to the gradient checker is not deterministic."""


class CheckpointError(AcppError, OSError):
    """A checkpoint file is malformed or could not be read."""


class ImageIOError(AcppError, OSError):
    """An image file could not be read or written."""

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"{path}: {reason}")


class DatasetError(AcppError, RuntimeError):
    """A dataset, manifest or split could not be produced."""


class CodecError(AcppError, RuntimeError):
    """A codec invocation failed; ``transcript`` holds the command and its output."""

    def __init__(self, message: str, transcript: str = ""):
        self.transcript = transcript
        super().__init__(f"{message}\n{transcript}" if transcript else message)


class RatePlanError(AcppError, RuntimeError):
    """No rate plan satisfies the request."""

    def __init__(
        self,
        message: str,
        min_achievable_bpp: Optional[float] = None,
        violating_pair: Optional[Tuple[str, int, int]] = None,
    ):
        self.min_achievable_bpp = min_achievable_bpp
        self.violating_pair = violating_pair
        super().__init__(message)


class NonFiniteError(AcppError, FloatingPointError):
    """A gradient or loss became NaN/inf."""

    def __init__(self, message: str, parameter: Optional[str] = None):
        self.parameter = parameter
        super().__init__(message)


class ConfigError(AcppError, ValueError):
    """The experiment configuration file is invalid."""
