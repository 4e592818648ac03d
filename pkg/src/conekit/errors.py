"""Exception types. Every error carries a stable ``code`` string."""
from __future__ import annotations


class ConekitError(Exception):
    code = "CONEKIT_ERROR"


class ConeViolation(ConekitError, ValueError):
    code = "CONE_VIOLATION"


class ShapeMismatch(ConekitError, ValueError):
    code = "SHAPE_MISMATCH"


class DomainError(ConekitError, ValueError):
    code = "DOMAIN_ERROR"


class AssumptionViolation(ConekitError):
    """A model fails one of the structural assumptions at some state."""

    code = "ASSUMPTION_VIOLATION"

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NoDefault(ConekitError, ValueError):
    code = "NO_DEFAULT"


class InternalOrderError(ConekitError, RuntimeError):
    code = "INTERNAL_ORDER_ERROR"


class MaxItersExceeded(ConekitError, RuntimeError):
    code = "MAX_ITERS_EXCEEDED"

    def __init__(self, message, increment_history=()):
        super().__init__(message)
        self.increment_history = list(increment_history)


class NonfiniteState(ConekitError, FloatingPointError):
    code = "NONFINITE_STATE"


class ClampBudgetExceeded(ConekitError, RuntimeError):
    code = "CLAMP_BUDGET_EXCEEDED"


class IncompatibleGrid(ConekitError, ValueError):
    code = "INCOMPATIBLE_GRID"


class StiffGrid(ConekitError, ValueError):
    """Time step too large for the trapezoid propagator to stay positive."""

    code = "STIFF_GRID"


class GridMismatch(ConekitError, ValueError):
    code = "GRID_MISMATCH"


class ConfigError(ConekitError, ValueError):
    code = "INVALID_CONFIG"


class ReportIOError(ConekitError, OSError):
    code = "IO_ERROR"

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
