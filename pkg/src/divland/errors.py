"""Exception hierarchy shared by all divland modules."""


class DivlandError(Exception):
    """Base class for all library errors."""


class UndefinedDivergenceError(DivlandError, ValueError):
    """Divergence requested at or below the ground plane (Z <= 0)."""


class EstimationError(DivlandError):
    """A divergence estimator could not produce a result from its input."""


class ConvergenceError(DivlandError):
    """An iterative fit stopped without meeting its tolerance.

    The last iterate is attached as ``last`` so callers can still inspect it.
    """

    def __init__(self, message, last=None, iterations=None):
        super().__init__(message)
        self.last = last
        self.iterations = iterations


class ConfigError(DivlandError, ValueError):
    """Malformed or inconsistent configuration."""
