"""Exception hierarchy shared across the package."""


class VqregError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(VqregError, ValueError):
    """Array shapes or dimensions violate an operation's contract."""


class SizeLimitError(VqregError, ValueError):
    """Requested problem size exceeds a documented guard."""


class NumericError(VqregError, ArithmeticError):
    """A numeric computation produced non-finite or degenerate values."""


class DivergenceError(NumericError):
    """Optimization diverged; carries the loss trace up to the failure."""

    def __init__(self, message, iteration=None, trace=None):
        super().__init__(message)
        self.iteration = iteration
        self.trace = list(trace) if trace is not None else []


class ConfigError(VqregError, ValueError):
    """Invalid run configuration (bad key, value, or file)."""


class CalibrationError(VqregError, ValueError):
    """No confidence level attains the requested coverage."""


class ArtifactError(VqregError, ValueError):
    """A serialized artifact is malformed, corrupt, or version-incompatible."""


class InfeasibleError(VqregError, ValueError):
    """Linear program has no feasible point."""


class UnboundedError(VqregError, ValueError):
    """Linear program objective is unbounded."""
