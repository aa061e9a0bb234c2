"""Exception hierarchy shared by the solver modules."""


class MRBSDEError(Exception):
    """Base class for all package errors."""


class RejectedSpec(MRBSDEError, ValueError):
    """Structural error in a problem specification."""


class InvalidGrid(MRBSDEError, ValueError):
    pass


class SingularDesign(MRBSDEError, ArithmeticError):
    """Regression Gram matrix is not positive definite even after ridge."""


class BracketFailure(MRBSDEError, ArithmeticError):
    """The mean-constraint root could not be bracketed."""


class InadmissibleTerminal(MRBSDEError, ValueError):
    """Terminal samples violate the mean constraint beyond tolerance."""


class DivergenceDetected(MRBSDEError, ArithmeticError):
    pass


class NoConvergence(MRBSDEError, RuntimeError):
    """Picard iteration did not reach tolerance.

    The last iteration trace (or list of traces) is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class InvalidRadius(MRBSDEError, ValueError):
    pass


class OutOfRange(MRBSDEError, ValueError):
    pass


class InvalidFixture(MRBSDEError, ValueError):
    pass


class GridMismatch(MRBSDEError, ValueError):
    pass


class ConfigError(MRBSDEError, ValueError):
    pass
