"""Exception hierarchy shared by every module."""


class XmaError(Exception):
    """Base class for all package errors."""


class ContractError(XmaError, ValueError):
    """Inputs violate an operation's shape or range contract."""


class DegenerateInputError(ContractError):
    """Zero-norm vector or other degenerate geometry."""


class NumericError(XmaError, ArithmeticError):
    """Non-finite loss, objective or covariance encountered."""


class FormatError(XmaError):
    """Malformed binary file (dataset or checkpoint)."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ConfigError(XmaError, ValueError):
    """Bad experiment configuration."""
