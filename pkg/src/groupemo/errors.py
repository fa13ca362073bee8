"""Exception hierarchy shared by every module."""


class GroupEmoError(Exception):
    """Base class for all package errors."""


class DimensionError(GroupEmoError, ValueError):
    pass


class InvalidMaskError(GroupEmoError, ValueError):
    pass


class DomainError(GroupEmoError, ValueError):
    pass


class DegenerateVectorError(GroupEmoError, ValueError):
    pass


class ContractError(GroupEmoError, ValueError):
    pass


class ValidationError(GroupEmoError, ValueError):
    """Input data violates an invariant (NaN features, zero faces, ...)."""


class ParseError(ValidationError):
    """A file could not be parsed; the message names the offending field."""


class LexiconError(ValidationError):
    pass


class IncompatibleCheckpointError(GroupEmoError):
    pass


class DivergenceError(GroupEmoError, RuntimeError):
    """Training produced a non-finite loss."""
