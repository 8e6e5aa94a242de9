"""Exception types shared across the simulator."""


class ConfigError(ValueError):
    """A run/sweep configuration violates a precondition."""


class NumericsError(RuntimeError):
    """Numerical degeneracy: vanishing norm, oversized step, broken invariant."""


class InsufficientDataError(ValueError):
    """An estimator was asked for a result with fewer than 2 usable samples."""
