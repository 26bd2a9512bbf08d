"""Exception taxonomy shared by every module.

The CLI maps these onto process exit codes: ArgumentError -> 2,
IOFormatError -> 3, DecodeError -> 4, ConfigError -> 5.
"""


class CodecError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CodecError, ValueError):
    """Tensor dimensions violate an operation's precondition."""


class RangeError(CodecError, ValueError):
    """An index or interval is out of range."""


class ArgumentError(CodecError, ValueError):
    """An argument value is invalid (bad flag, bad interval, bad option)."""


class StateError(CodecError, RuntimeError):
    """An object is used in a state that forbids the operation."""


class ContractError(CodecError, RuntimeError):
    """A cross-module contract (e.g. slice causality) was violated."""


class NumericError(CodecError, ArithmeticError):
    """A computation produced a non-finite value where finiteness is required."""


class DecodeError(CodecError, RuntimeError):
    """A byte stream cannot be decoded (truncation, bad framing)."""


class ParseError(DecodeError):
    """A container header or chunk frame is malformed."""


class IOFormatError(CodecError, OSError):
    """An input file has an unsupported or broken format."""


class ConfigError(CodecError, RuntimeError):
    """Model, profile, or header configuration mismatch."""
