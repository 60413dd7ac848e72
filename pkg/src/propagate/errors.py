"""Exception hierarchy shared across the package.

Everything raised deliberately by this package derives from PropagateError so
callers can catch one base class at pipeline boundaries.  Plain ValueError is
still used for programmer errors (bad arguments, violated preconditions).
"""


class PropagateError(Exception):
    """Base class for anticipated, domain-level failures."""


class InputError(PropagateError):
    """Raw event stream could not be read or decoded at all."""


class EmptyDatasetError(PropagateError):
    """No usable records remain after parsing and filtering."""


class DivergenceError(PropagateError):
    """Model state or right-hand side became non-finite.

    Carries the integration time at which the failure was detected, when
    known, so logs can point at the offending region of the trajectory.
    """

    def __init__(self, message: str, time: float | None = None):
        if time is not None:
            message = f"{message} (at t={time:g})"
        super().__init__(message)
        self.time = time


class StiffnessError(PropagateError):
    """Adaptive step size underflowed the configured minimum."""

    def __init__(self, message: str, time: float | None = None):
        if time is not None:
            message = f"{message} (at t={time:g})"
        super().__init__(message)
        self.time = time


class StepBudgetError(PropagateError):
    """Adaptive solver exceeded its step budget before reaching the end."""


class GradientError(PropagateError):
    """Automatic differentiation produced or received a non-finite value."""


class FitFailureError(PropagateError):
    """Every optimizer iteration diverged; no usable parameters exist.

    The loss trace up to the failure is attached for post-mortems.
    """

    def __init__(self, message: str, loss_trace=None):
        super().__init__(message)
        self.loss_trace = list(loss_trace) if loss_trace is not None else []


class CheckpointError(PropagateError):
    """Checkpoint file is malformed or belongs to a different model kind."""
