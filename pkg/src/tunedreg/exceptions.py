"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Input is malformed: non-finite, wrong shape, or out of domain."""


class InfeasibleError(ValueError):
    """The range constraint cannot be met, e.g. ``y`` is outside ``range(R)``."""


class NotAttainedError(ValueError):
    """An infimum exists but no finite weight matrix attains it."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""
