"""Exception hierarchy shared by all wignerlab modules."""


class WignerLabError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(WignerLabError, ValueError):
    """Invalid user input (measure, test function, configuration)."""


class DomainError(ValidationError):
    """Argument outside the domain where the quantity is defined."""


class RegularityViolation(ValidationError):
    """The deformation measure fails the regularity condition."""


class NumericalError(WignerLabError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class NoConvergence(NumericalError):
    pass


class NonHerglotz(NumericalError):
    pass


class EdgeNotBracketed(NumericalError):
    pass


class KernelOutOfRange(NumericalError):
    pass


class ConvergenceFailure(NumericalError):
    pass


class IoError(WignerLabError, OSError):
    pass


class SchemaMismatch(WignerLabError, ValueError):
    pass
