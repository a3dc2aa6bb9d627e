"""Exception hierarchy shared by every module of the package."""


class FisherFlowError(Exception):
    """Base class for all errors raised by fisherflow."""


# Mobility errors

class MobilityError(FisherFlowError):
    """A mobility function violates a structural condition."""


class NonConcaveMobility(MobilityError):
    """m'' is positive somewhere on the sample mesh."""


class NonPositiveMobility(MobilityError):
    """m vanishes or is negative at an interior point."""


class DivergentIntegral(MobilityError):
    """Quadrature of f (or h) failed to converge."""


class OutOfRange(MobilityError):
    """Argument outside the range of the map being inverted."""


class DeltaTooLarge(MobilityError):
    """No root bracket exists for m(z) = delta."""


class DerivativeVanishes(MobilityError):
    """m'(z) = 0 and m''(z) = 0, so the convexity ratio is indeterminate."""


# Grid errors

class Infeasible(FisherFlowError):
    """The constraint set {0 <= u <= S, mass = U} is empty."""


class GridMismatch(FisherFlowError):
    """Two fields or runs live on different grids."""


# Transport errors

class MassMismatch(FisherFlowError):
    """Endpoint densities of a transport problem carry different mass."""


class NoConvergence(FisherFlowError):
    """The primal-dual iteration hit its iteration limit."""

    def __init__(self, iterations, residuals):
        self.iterations = iterations
        self.residuals = residuals
        super().__init__(
            f"transport solver did not converge after {iterations} iterations "
            f"(residuals: {residuals})"
        )


# Scheme errors

class InnerDivergence(FisherFlowError):
    """The transport solver produced non-finite iterates inside a scheme step."""


class StepRejected(FisherFlowError):
    """Backtracking was exhausted without decreasing the penalized objective."""


class ScheduleNotDecreasing(FisherFlowError):
    """A regularization schedule is not strictly decreasing and positive."""


class NewtonFailure(FisherFlowError):
    """The implicit integrator's Newton iteration failed or the data is too degenerate."""


class ConfigError(FisherFlowError):
    """A run configuration could not be parsed or is inconsistent."""
