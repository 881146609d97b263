"""Exception hierarchy shared by every module."""


class UmsimError(Exception):
    """Base class for all errors raised by umsim."""


class InvalidParameterError(UmsimError, ValueError):
    """A parameter is outside its documented domain."""


class ShapeError(UmsimError, ValueError):
    """Array dimensions do not agree."""


class NumericalRankError(UmsimError, ArithmeticError):
    """A matrix is numerically rank deficient where full rank is required."""


class DivergenceError(UmsimError, ArithmeticError):
    """An iterative algorithm produced a non-finite state."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class UnsupportedEvaluationError(UmsimError, ValueError):
    """The requested quantity does not exist for this prior (e.g. score of a spike)."""


class SearchSpaceTooLargeError(UmsimError, ValueError):
    """Exhaustive search would exceed the enumeration guard."""


class BisectionError(UmsimError, ArithmeticError):
    """Bracketing failed while solving for a Lagrange multiplier."""


class ConfigError(UmsimError, ValueError):
    """A simulation config failed validation; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
