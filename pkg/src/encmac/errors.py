"""Exception types raised by encmac."""

from typing import Any, List, Optional


class EncMacError(Exception):
    """Base class for all encmac errors."""


class ContractError(EncMacError, ValueError):
    """A precondition, shape or dimension requirement was violated."""


class CodeRangeError(ContractError):
    """An operand code lies outside [0, 2^W)."""


class UnsupportedSizeError(ContractError):
    """An operand width outside the supported 1..8 bit range."""


class TargetUnreachableError(EncMacError):
    """Even the widest probed output width missed the target RMSE.

    Attributes:
        encoding: Best encoding found during the search
        trace: Search trace up to the failure
    """

    def __init__(self, message: str, encoding: Any = None, trace: Any = None):
        super().__init__(message)
        self.encoding = encoding
        self.trace = trace


class CalibrationFailedError(EncMacError):
    """No RMSE on the calibration grid keeps the accuracy drop under threshold."""


class TrainingDivergedError(EncMacError):
    """Fine-tuning produced a non-finite loss."""

    def __init__(self, message: str, losses: Optional[List[float]] = None):
        super().__init__(message)
        self.losses = list(losses or [])
