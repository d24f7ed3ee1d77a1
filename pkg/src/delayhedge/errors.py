"""Exception hierarchy shared by the library and the CLI."""


class DelayHedgeError(Exception):
    """Base class for library errors."""


class GridMismatchError(DelayHedgeError, ValueError):
    """Two states live on different history grids."""


class DomainError(DelayHedgeError, ValueError):
    """An argument lies outside the operation's domain."""


class ConfigError(DelayHedgeError, ValueError):
    """Invalid configuration, schema violation or missing setup."""


class NumericalError(DelayHedgeError, ArithmeticError):
    """Non-finite values, instability or a failed linear solve."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NondegeneracyError(NumericalError):
    """The diffusion matrix lost positive definiteness at some node."""
