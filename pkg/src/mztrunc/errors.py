"""Exception hierarchy shared by all modules."""


class MZError(Exception):
    """Base class for every error raised by the package."""


class InvalidBodyError(MZError, ValueError):
    """A convex body is malformed (empty vertex list, negative radius, ...)."""


class ProjectionError(MZError, ArithmeticError):
    """The minimum-norm-point iteration failed to converge."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class GridError(MZError, ValueError):
    """Grid/field shape, component or boundary mismatch."""


class FieldFormatError(MZError, ValueError):
    """An FLD1 file is malformed."""


class PreconditionError(MZError, ValueError):
    """A documented precondition of an algorithm is violated."""


class ScheduleError(MZError, ValueError):
    """The requested iteration schedule is infeasible."""


class DivergenceError(MZError, RuntimeError):
    """Truncation sweeps stopped reducing the L1 functional."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(MZError, ValueError):
    """Experiment configuration is invalid or references missing files."""
