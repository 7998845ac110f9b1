"""Exception hierarchy shared by every nvstimex module."""


class NvStimexError(Exception):
    """Base class for all package errors."""


class DomainError(NvStimexError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalError(NvStimexError, ArithmeticError):
    """Base class for failures of a numerical procedure."""


class IntegrationError(NumericalError):
    """Time integration failed; ``time`` is where it gave up (seconds)."""

    def __init__(self, message, time):
        super().__init__(f"{message} (t = {time:.9g} s)")
        self.time = time


class ConvergenceError(NumericalError):
    """An iterative procedure did not converge within its bound."""


class FitError(NumericalError):
    """A fit failed. ``best`` holds the best-so-far result when one exists."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FitQualityError(FitError):
    """Data handed to a fit does not match the assumed model shape."""
