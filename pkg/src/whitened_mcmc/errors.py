"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(ArithmeticError):
    """A numerical routine failed to converge or produced a non-finite value."""


class UnsupportedGradientError(NotImplementedError):
    """The requested gradient does not exist for this transform."""


class FormatError(ValueError):
    """A data file does not follow the expected binary or text layout."""
