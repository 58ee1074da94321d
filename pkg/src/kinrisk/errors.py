"""Exception hierarchy shared across the package."""


class KinriskError(Exception):
    """Base class for all package errors."""


class ValidationError(KinriskError, ValueError):
    """Input data or arguments violate a documented invariant."""


class ParseError(ValidationError):
    """A CSV cell could not be parsed.

    Attributes
    ----------
    row : int or None
        1-based data row number (header excluded) where parsing failed.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class IdentifiabilityError(ValidationError):
    """The dataset cannot identify the mixture model."""


class NumericalError(KinriskError, RuntimeError):
    """A numerical procedure failed (singular system, empty risk set, ...)."""


class SingularHessianError(NumericalError):
    """The M-step Hessian is singular along some parameter direction.

    Attributes
    ----------
    direction : dict
        Parameter name -> loading of the (near) null eigenvector, largest first.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction or {}
