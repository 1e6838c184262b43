"""Exception and warning types raised across the package."""


class RobustGrowthError(Exception):
    """Base class for all package errors."""


class InvalidInput(RobustGrowthError, ValueError):
    """An argument is malformed (non-finite, wrong shape, off the simplex)."""


class InvalidParameter(RobustGrowthError, ValueError):
    """A model or algorithm parameter lies outside its admissible range."""


class BoundaryError(RobustGrowthError, ValueError):
    """A finite-difference stencil would leave the open simplex."""


class NumericalError(RobustGrowthError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class NotGradientError(RobustGrowthError):
    """The drift field is not a known gradient, so no closed-form optimum exists."""


class ConfigError(RobustGrowthError, ValueError):
    """A model file or experiment configuration is invalid.

    The offending key is kept in ``key`` so callers can report it.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class StepSizeWarning(UserWarning):
    """Too many wealth-integration steps hit the log guard; shrink ``dt``."""
