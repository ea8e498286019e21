"""Exception hierarchy shared by all modules."""


class NLSVortexError(Exception):
    """Base class for every error raised by the package."""


class ConfigurationError(NLSVortexError, ValueError):
    """Invalid grid, parameters, or experiment configuration."""


class DomainError(NLSVortexError, ValueError):
    """An operation was called outside the time/frequency range where it is defined."""


class IntegrationError(NLSVortexError, RuntimeError):
    """ODE integration failed (step-size underflow, non-finite state, ...)."""

    def __init__(self, message, xi=None, t=None):
        super().__init__(message)
        self.xi = xi
        self.t = t


class AliasingError(NLSVortexError, RuntimeError):
    """Too much spectral mass near the Nyquist frequency."""


class InstabilityError(IntegrationError):
    """Solution blew up during time stepping."""


class GuardRefusal(NLSVortexError, ValueError):
    """Initial or asymptotic data too large for the small-data regime."""


class ConvergenceError(NLSVortexError, RuntimeError):
    """A limit or fixed-point iteration failed to converge."""


class InconsistencyError(NLSVortexError, RuntimeError):
    """Two independent computations of the same quantity disagree."""


class CurvaturePositivityError(NLSVortexError, ValueError):
    """Curvature vanished where a Frenet frame is needed."""
