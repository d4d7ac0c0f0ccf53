"""Exception hierarchy shared by all modules."""


class HJMError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(HJMError, ValueError):
    pass


class ArgumentError(HJMError, ValueError):
    pass


class InvalidInputError(HJMError, ValueError):
    pass


class UnsupportedError(HJMError, NotImplementedError):
    pass


class ModelError(HJMError, ValueError):
    """A model violates a structural hypothesis (commutation, CP, cointegration)."""


class SpecError(ModelError):
    pass


class IncompatibilityError(ModelError):
    """The affine representation is incompatible with the requested mean reversion."""

    def __init__(self, message, max_residual=None, location=None):
        super().__init__(message)
        self.max_residual = max_residual
        self.location = location


class ConfigurationError(HJMError, ValueError):
    pass


class PositivityError(HJMError, ArithmeticError):
    """A jump drove the density process to a non-positive value."""


class PlanError(HJMError, ValueError):
    pass
