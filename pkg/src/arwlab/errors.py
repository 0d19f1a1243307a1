"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class IllegalTopplingError(RuntimeError):
    """A toppling was requested at a site that is currently stable."""


class BudgetExceededError(RuntimeError):
    """A step or walk budget ran out before the operation finished.

    The partial result accumulated so far is attached as ``partial`` so
    callers can inspect how far the run got; it is never silently used
    as if the run had completed.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConstructionFailedError(RuntimeError):
    """A hierarchy builder could not make progress (bad preconditions)."""


class InvalidSamplerError(ValueError):
    """A joint sampler failed its marginal distribution check."""
