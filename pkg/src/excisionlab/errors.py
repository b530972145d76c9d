"""Exception types shared across the laboratory."""


class InputError(ValueError):
    """An argument violates a documented precondition."""


class FlowDomainError(RuntimeError):
    """A flow was requested outside its maximal existence interval.

    Carries the offending time and the backward/forward time bounds
    ``(backward, forward)`` of the starting point.
    """

    def __init__(self, t, backward, forward):
        self.t = t
        self.backward = backward
        self.forward = forward
        super().__init__(
            f"time {t} outside flow domain ({backward}, {forward})"
        )


class ExcisedPointError(RuntimeError):
    """The time-1 map was evaluated at a point that leaves before t=1."""


class ToleranceFailure(RuntimeError):
    """A quadrature or stepper could not meet its tolerance.

    ``partial`` holds the best lower bound accumulated so far.
    """

    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class StencilError(RuntimeError):
    """A finite-difference stencil point fell outside the map's domain."""


class DepthExhausted(RuntimeError):
    """A lazily built field needed more refinement levels than allowed."""


class CoverageError(RuntimeError):
    """Internal error: a partition of unity failed to cover a query point."""
