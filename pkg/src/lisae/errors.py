"""Exception hierarchy shared by every lisae module."""

from __future__ import annotations


class LisaeError(Exception):
    """Base class for all library errors."""


class ParameterError(LisaeError, ValueError):
    """An argument is out of range or has the wrong shape."""


class DataError(LisaeError, ValueError):
    """Input data is empty, non-finite or otherwise unusable."""


class PreconditionError(LisaeError, ValueError):
    """An operation's documented precondition does not hold."""


class ConsistencyError(LisaeError, RuntimeError):
    """Internal state mismatch, e.g. a trace produced by another model."""


class NumericError(LisaeError, ArithmeticError):
    """Non-finite values appeared during a computation."""


class ConfigError(LisaeError, ValueError):
    """Invalid configuration values or combinations."""


class SpecError(LisaeError, ValueError):
    """Invalid task or ablation specification."""


class IdxParseError(LisaeError, ValueError):
    """Base class for IDX file parsing failures."""


class BadMagicError(IdxParseError):
    pass


class TruncatedFileError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass


class ModelFormatError(LisaeError, ValueError):
    """Serialized model file has the wrong magic or layout."""
