"""Exception types shared across the package."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite values."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=None, x=None):
        super().__init__(message)
        self.residual = residual
        self.x = x


class FormatError(ValueError):
    """Malformed, truncated or version-incompatible file payload."""
