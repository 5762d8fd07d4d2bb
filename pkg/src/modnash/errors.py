"""Exception hierarchy shared by every module."""


class NashError(Exception):
    """Base class for all errors raised by modnash."""


class StructuralError(NashError, ValueError):
    """Layouts, dimensions or index sets do not fit together."""


class ParameterError(NashError, ValueError):
    """A scalar parameter is outside its admissible range."""


class ModelValidityError(NashError):
    """A problem instance violates a modelling assumption.

    ``witness`` holds the pair ``(x, y)`` exhibiting the violation when one
    is available.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConfigurationError(NashError, ValueError):
    """Solver configuration violates a step-size, delay or block condition."""


class SchedulingError(NashError):
    """A schedule refers to an iterate that is not in the history."""


class NumericalError(NashError, ArithmeticError):
    """An inner numerical routine failed to converge."""


class NumericalDivergenceError(NumericalError):
    """A non-finite value appeared during the iteration."""


class DegeneracyError(NashError, ArithmeticError):
    """A linear system that must be nonsingular is singular."""


class UnboundednessError(NashError):
    """A best-response objective decreases without bound."""


class OracleError(NashError):
    """The verification oracle cannot evaluate the requested quantity."""
