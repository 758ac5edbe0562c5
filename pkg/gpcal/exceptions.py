"""
Error hierarchy for the calibration library
Every failure raised by library code derives from GpCalError so the CLI can
map it onto an exit code
"""

from typing import Optional, Sequence


class GpCalError(Exception):
    """Base class for all calibration errors"""

    exit_code = 1


class ConfigError(GpCalError):
    """Invalid or unknown configuration"""

    exit_code = 2


class UsageError(GpCalError):
    """Invalid command-line usage detected before any computation"""

    exit_code = 2


class DataError(GpCalError):
    """Malformed input data"""

    exit_code = 3


class ContractViolation(DataError, ValueError):
    """A precondition of a library operation does not hold"""


class NumericalError(GpCalError):
    """A numerical procedure could not produce a valid result"""

    exit_code = 4


class DegenerateCovarianceError(NumericalError):
    """Cholesky factorization failed even after jitter escalation"""


class InsufficientDegreesOfFreedomError(NumericalError):
    """REML needs strictly more observations than the rank of H"""


class NonIdentifiableError(NumericalError):
    """H^t R^-1 H is singular: some parameter combinations are not identified"""

    def __init__(self, message: str, null_space_dim: int = 0):
        super().__init__(message)
        self.null_space_dim = null_space_dim


class NegativeVarianceError(NumericalError):
    """Predictive variance is negative beyond round-off"""


class ModelEvaluationError(NumericalError):
    """The computer model returned a non-finite output during finite differences"""

    def __init__(self, message: str, point_index: int, parameter_index: Optional[int]):
        super().__init__(message)
        self.point_index = point_index
        self.parameter_index = parameter_index


class EstimationFailedError(NumericalError):
    """Every REML start produced an invalid objective"""

    def __init__(self, message: str, trace: Sequence = ()):
        super().__init__(message)
        self.trace = list(trace)


class FoldTooSmallError(NumericalError):
    """A cross-validation training fold has n_train <= rank(H_train)"""

    def __init__(self, message: str, fold: int):
        super().__init__(message)
        self.fold = fold


def exit_code_for(error: BaseException) -> int:
    """
    Map an exception onto the CLI exit code.

    Args:
        error: Raised exception

    Returns:
        2 usage/config, 3 data, 4 numerical, 1 otherwise
    """
    if isinstance(error, GpCalError):
        return error.exit_code
    return 1
