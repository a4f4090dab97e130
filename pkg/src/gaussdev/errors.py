"""Exception hierarchy shared by every verification module."""


class GaussDevError(Exception):
    """Base class for all errors raised by gaussdev."""


class DomainError(GaussDevError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigurationError(GaussDevError, ValueError):
    """A numerical configuration (order, count, step) is out of range."""


class ContractError(GaussDevError, ValueError):
    """A precondition on the inputs (flags, sortedness, grid shape) is violated."""


class DivergenceError(GaussDevError, ArithmeticError):
    """An integral is non-finite or fails to stabilise under refinement."""


class NumericError(GaussDevError, ArithmeticError):
    """A computed quantity overflowed or became non-finite."""


class PositivityError(GaussDevError, ArithmeticError):
    """A quantity that must be strictly positive was not."""


class RangeError(GaussDevError, ValueError):
    """A level/integration range is degenerate or too narrow."""


class ResolutionError(GaussDevError, ValueError):
    """Sample or grid resolution is insufficient for the requested output."""


class CriticalLevelError(GaussDevError, ValueError):
    """A level coincides with a critical value of the function."""


class AnalysisFailure(GaussDevError, RuntimeError):
    """A diagnostic analysis produced an out-of-contract result."""


class DegenerateMeasureError(DomainError):
    """A body has Gaussian measure 0 or 1, so Phi^{-1} of it is infinite."""
