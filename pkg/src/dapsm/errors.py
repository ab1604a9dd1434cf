"""Exception hierarchy shared by the matching pipeline and the CLI."""


class DapsmError(Exception):
    """Base class for all errors raised by this package."""


class InputError(DapsmError, ValueError):
    """Malformed or inconsistent input (shapes, coordinates, ids, schema)."""


class DegenerateScaleError(InputError):
    """All treated-control distances are equal, so min-max scaling is undefined."""


class DegenerateCovariateError(InputError):
    """A covariate has zero spread, so its standardized difference is undefined."""


class RankError(InputError):
    """Design matrix is not of full column rank."""


class NumericalError(DapsmError, ArithmeticError):
    """A numerical routine failed (factorization, non-finite values)."""


class SeparationError(NumericalError):
    """Logistic coefficients diverge: treatment is (quasi-)separable."""


class ConvergenceError(NumericalError):
    """Iterative fitting did not converge within its iteration budget."""


class EstimationError(DapsmError):
    """Effect estimation is impossible on the supplied matched set."""


class NoBalancedWeightError(DapsmError):
    """No candidate weight produced balance on every observed covariate.

    The evaluated trajectory is attached so callers can report it.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = list(trajectory or [])
