"""Exception hierarchy shared by all spde_lab modules."""


class SpdeLabError(Exception):
    """Base class for every error raised by spde_lab."""

    exit_code = 1

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class ConfigurationError(SpdeLabError, ValueError):
    """Invalid grid, time grid, scenario file or override."""

    exit_code = 2


class ContractViolation(SpdeLabError, ValueError):
    """A caller broke a documented precondition of an operation."""

    exit_code = 3


class PreconditionError(ContractViolation):
    """Input data fails a mathematical precondition (trace, parabolicity, ...)."""


class EvaluationError(SpdeLabError, FloatingPointError):
    """A coefficient produced NaN/Inf somewhere on the grid."""

    exit_code = 4

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class NumericalError(SpdeLabError, ArithmeticError):
    """Linear solve failure or similar breakdown of the scheme."""

    exit_code = 4


class AnalysisError(SpdeLabError):
    """Estimator could not produce a value (e.g. every path poisoned)."""

    exit_code = 5

    def __init__(self, message, poisoned=0):
        super().__init__(message)
        self.poisoned = poisoned
