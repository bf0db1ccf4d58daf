"""Exception hierarchy shared by every stage of the pipeline."""


class MMMError(Exception):
    """Base class for all package errors."""


class ValidationError(MMMError, ValueError):
    """Input data violates a documented invariant."""


class MissingFileError(MMMError, FileNotFoundError):
    """A required corpus or checkpoint file is absent."""


class FormatError(ValidationError):
    """A file does not follow its on-disk format."""


class NumericAbort(MMMError, FloatingPointError):
    """Training produced a non-finite value."""
