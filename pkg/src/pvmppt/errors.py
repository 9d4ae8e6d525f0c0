"""Exception types shared across the package."""


class PvMpptError(Exception):
    """Base class for all package errors."""


class NonConvergence(PvMpptError):
    """An iterative solver failed to reach its tolerance."""


class CalibrationFailure(PvMpptError):
    """Panel parameters could not be fitted to the requested targets."""


class UnstableStep(PvMpptError):
    """Integrator step size violates the stability guard."""


class EstimateOutOfRange(PvMpptError):
    """A neural MPP estimate fell outside the physically possible range."""


class TrainingDiverged(PvMpptError):
    """Levenberg-Marquardt damping blew up without an accepted step."""


class OutOfRange(PvMpptError):
    """A time stamp lies outside a scenario profile."""


class EmptyTrace(PvMpptError):
    """Metrics were requested for a trace without rows."""


class ConfigError(PvMpptError):
    """Invalid or unknown configuration entry."""


class SimulationError(PvMpptError):
    """Sub-module failure annotated with the simulation time stamp."""

    def __init__(self, t: float, cause: Exception):
        super().__init__(f"at t={t:.6f} s: {type(cause).__name__}: {cause}")
        self.t = t
        self.cause = cause
