"""Exception types raised across the package."""


class ScenarioFBEError(Exception):
    """Base class for all package errors."""


class NonStochasticMatrix(ScenarioFBEError, ValueError):
    pass


class StageOutOfRange(ScenarioFBEError, IndexError):
    pass


class DimensionMismatch(ScenarioFBEError, ValueError):
    pass


class UnsupportedSpec(ScenarioFBEError, TypeError):
    pass


class NotStronglyConvex(ScenarioFBEError, ValueError):
    pass


class ShapeChanged(ScenarioFBEError, ValueError):
    pass


class CacheMismatch(ScenarioFBEError, ValueError):
    pass


class InfiniteConjugate(ScenarioFBEError, ArithmeticError):
    """The conjugate of g is +inf at the forward-backward point."""


class MaxItersExceeded(ScenarioFBEError, RuntimeError):
    pass


class LineSearchStalled(ScenarioFBEError, RuntimeError):
    pass


class StepUnderflow(ScenarioFBEError, RuntimeError):
    pass


class ZeroProbability(ScenarioFBEError, ValueError):
    pass


class InvalidParams(ScenarioFBEError, ValueError):
    pass


class ProblemFileError(ScenarioFBEError, ValueError):
    """Raised when a problem file cannot be parsed."""
