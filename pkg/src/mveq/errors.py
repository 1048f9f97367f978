"""Exception hierarchy shared by all modules."""


class MveqError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MveqError, ValueError):
    """A scenario or experiment description is malformed or incomplete."""


class FloorViolation(MveqError, ValueError):
    """Volatility squared fell below the declared floor."""


class UnboundedCoefficient(MveqError, ValueError):
    """A Brownian-driven coefficient was declared without an explicit bound."""


class NotDeterministic(MveqError, ValueError):
    """A closed form that needs deterministic coefficients got a random one."""


class GridMismatch(MveqError, ValueError):
    """Two objects that must share one time grid do not."""


class NumericalFailure(MveqError, ArithmeticError):
    """Base class for failures of the numerical schemes."""


class NonFinite(NumericalFailure):
    """A simulated path produced inf or nan."""


class SingularRegression(NumericalFailure):
    """Normal equations of a conditional-expectation regression are singular."""


class StepSizeTooLarge(NumericalFailure):
    """The implicit step of a linear BSDE would divide by a non-positive number."""


class DegenerateM(NumericalFailure):
    """The auxiliary linear BSDE solution came too close to zero."""


class DegenerateP1(NumericalFailure):
    """A Riccati component that must stay positive did not."""


class FormulaMismatch(NumericalFailure):
    """Two algebraically equivalent operator formulas disagree numerically."""


class InsufficientPaths(NumericalFailure):
    """A Monte Carlo estimate is too noisy for the requested precision."""
