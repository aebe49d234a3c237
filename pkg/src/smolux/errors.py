"""Exception hierarchy shared by all smolux modules."""


class SmoluxError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(SmoluxError, ValueError):
    """Inputs are inconsistent: mismatched grids, bad parameters, unknown keys."""


class PositivityError(ConfigurationError):
    """A weight or density that must be strictly positive is not."""


class NumericError(SmoluxError, FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


class PathDivergenceError(NumericError):
    """An Euler-Maruyama path left the finite floats.

    ``step`` is the index of the step that produced the non-finite state.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MisuseError(SmoluxError, TypeError):
    """An operation was called on a model outside its admissible family."""


class NonConvergenceError(SmoluxError, RuntimeError):
    """Picard iteration failed even after repeated horizon halving."""

    def __init__(self, message, contraction=None, report=None):
        super().__init__(message)
        self.contraction = contraction
        self.report = report
