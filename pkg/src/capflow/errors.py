"""Exception types raised by the capflow package."""


class CapflowError(Exception):
    """Base class for all capflow errors."""


class SingularPoint(CapflowError):
    """Ball-to-halfspace map evaluated at (or too close to) its singular point e."""


class InfiniteRadius(CapflowError):
    """A finite-radius formula was asked for the flat-ball member of the family."""


class QuadratureFailure(CapflowError):
    """Adaptive quadrature could not reach the requested tolerance."""


class OutOfRange(CapflowError):
    """Requested functional value lies outside the attainable range of the cap family."""


class DegenerateMetric(CapflowError):
    """Induced metric determinant fell below the degeneracy guard."""


class ObliquenessViolated(CapflowError):
    """Contact angle outside (0, pi/2]; the boundary condition is no longer uniformly oblique."""


class StepFailure(CapflowError):
    """Time step rejected too many times in a row."""


class StarShapeLost(CapflowError):
    """<X_e, nu> became non-positive somewhere: the state left the star-shaped regime."""


class NotConverged(CapflowError):
    """Flow hit t_max before the stopping tolerance; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class ShellViolation(CapflowError):
    """Sample is not contained in the required cap-shell bracket."""


class OrderRegression(CapflowError):
    """Observed convergence order fell below the hard floor of the consistency suite."""


class CheckpointError(CapflowError):
    """Checkpoint file is missing, malformed, or inconsistent with the run config."""
