"""Exception taxonomy shared by all cwic modules."""


class CwicError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CwicError):
    """Shape or broadcast mismatch between operands."""


class PaddingError(CwicError):
    """Requested padding is invalid for the input extent."""


class ContractError(CwicError):
    """A documented precondition of an operation was violated."""


class NumericError(CwicError):
    """A non-finite value appeared where only finite values are legal."""


class ConfigError(CwicError):
    """Inconsistent or unsupported configuration."""


class IngestError(CwicError):
    """An input file could not be read or parsed."""


class DecodeError(CwicError):
    """A bitstream or checkpoint failed to decode."""


class HashMismatchError(DecodeError):
    """Bitstream was produced under a different model configuration."""
