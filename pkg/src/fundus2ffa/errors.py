"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid argument: bad kernel size, shape mismatch, out-of-range value."""


class DataError(RuntimeError):
    """Unreadable, missing or inconsistent input data on disk."""


class NumericFault(ArithmeticError):
    """A loss term or activation became non-finite."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class CheckpointError(DataError):
    """Missing, corrupt or config-incompatible checkpoint / weight file."""
