"""Exception types shared across the package."""


class UnsupportedTaskError(ValueError):
    """Operation asked for on a task that cannot provide it (e.g. TSM off the Gaussian model)."""


class UnreachableObservationError(RuntimeError):
    """Rejection sampling gave up: the target observation is (practically) unreachable."""


class DivergenceError(RuntimeError):
    """A numeric trajectory (training or sampling) produced non-finite values."""
