"""Exception types shared across the package."""


class BubbleLabError(Exception):
    """Base class for all package errors."""


class ConfigError(BubbleLabError):
    """Invalid simulation or experiment configuration."""


class InputError(BubbleLabError):
    """A user-supplied object (coefficient function, payoff, ...) is unusable."""


class UnsupportedModelError(BubbleLabError):
    """The requested operation is not defined for this model kind."""


class UnsupportedPayoffError(BubbleLabError):
    """The payoff lacks the structure (eta limits, boundedness) the estimator needs."""


class NumericsError(BubbleLabError):
    """A quadrature or other numerical routine failed to converge."""


class SingularityError(BubbleLabError):
    """A covariation matrix degenerated at a simulated state."""


class IndeterminateStrictnessError(BubbleLabError):
    """Tail behaviour of a diffusion coefficient could not be classified."""
