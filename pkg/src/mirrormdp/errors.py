"""Exception types raised by the library."""


class DomainError(ValueError):
    """A point lies outside the feasible box."""


class NoProductiveStepsError(RuntimeError):
    """Mirror descent finished without a single productive iteration.

    The primal average is undefined in that case. ``trace`` holds whatever
    the run recorded so the caller can see how the constraints behaved.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConvergenceError(RuntimeError):
    """An iterative oracle hit its iteration cap before its tolerance."""


class NotMixingError(RuntimeError):
    """A sampled policy's chain did not mix within the allowed horizon."""


class StationaryDistributionError(RuntimeError):
    """The chain has no unique stationary distribution."""


class ProtocolError(RuntimeError):
    """A worker received a message it cannot handle in its current state."""
