"""Exception hierarchy shared by all modules."""


class MOUError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(MOUError, ValueError):
    """Array has the wrong shape for the requested operation."""


class DomainError(MOUError, ValueError):
    """Input outside the domain of the operation (e.g. non-finite entries)."""


class ConfigError(MOUError, ValueError):
    """Invalid configuration or parameter combination."""


class FormatError(MOUError, ValueError):
    """Malformed input file."""


class NumericalError(MOUError, ArithmeticError):
    """A numerical procedure could not produce a valid result."""


class SingularMatrixError(NumericalError):
    """Matrix is singular to working precision.

    Attributes
    ----------
    magnitude : float
        Magnitude of the offending eigenvalue or pivot, when known.
    """

    def __init__(self, message, magnitude=float("nan")):
        super().__init__(message)
        self.magnitude = magnitude


class StabilityError(NumericalError):
    """Jacobian is not Hurwitz-stable, or a simulation diverged."""


class DegenerateInputError(NumericalError):
    """Input carries no usable information (constant vectors, empty draws)."""


class ConvergenceError(NumericalError):
    """Iterative procedure failed to make progress.

    Attributes
    ----------
    trace : list of float
        Objective values recorded before giving up.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
