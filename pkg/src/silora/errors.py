"""Exception hierarchy shared by every silora module."""


class SiloraError(Exception):
    """Base class for all errors raised by silora."""


class ShapeError(SiloraError, ValueError):
    """An array does not have the geometry an operation expects."""


class DomainError(SiloraError, ValueError):
    """Values fall outside the permitted range."""


class ConfigError(SiloraError, ValueError):
    """Invalid configuration (bad rank, mismatched sites, bad config keys)."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class DegenerateInputError(SiloraError, ValueError):
    """Input has too little variation for the requested operation."""


class DataError(SiloraError):
    """A dataset record could not be loaded or validated."""


class NumericalError(SiloraError, ArithmeticError):
    """Training produced a non-finite value."""


class IncompatibleCheckpointError(SiloraError):
    """A checkpoint's format version or bundle hash does not match."""
