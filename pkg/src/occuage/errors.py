"""Exception types shared across the package."""


class OccuageError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(OccuageError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigurationError(OccuageError, ValueError):
    """A layer or run configuration is arithmetically or semantically invalid."""


class DomainError(OccuageError, ValueError):
    """An argument is outside its valid domain (e.g. occupation index)."""


class FormatError(OccuageError, ValueError):
    """An input file or array does not match the documented format."""


class UsageError(OccuageError, RuntimeError):
    """An API was called in an unsupported way (e.g. backward on a non-scalar)."""


class CheckpointError(OccuageError, RuntimeError):
    """A checkpoint file is missing, truncated, corrupt, or incompatible."""


class TrainingError(OccuageError, RuntimeError):
    """Training hit an unrecoverable condition (e.g. a non-finite loss)."""
