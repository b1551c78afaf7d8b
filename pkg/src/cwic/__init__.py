"""Learned image compression with cross-scale window attention.

The package provides an analysis/synthesis transform pair with feature
encoding stages, a mean-scale hyperprior entropy model, a range-coded
bitstream, and the training/evaluation harness around them.
"""

from .errors import (
    ConfigError,
    ContractError,
    CwicError,
    DecodeError,
    DimensionError,
    HashMismatchError,
    IngestError,
    NumericError,
    PaddingError,
)
from .tensor import Tensor, no_grad

__all__ = [
    "Tensor",
    "no_grad",
    "CwicError",
    "DimensionError",
    "PaddingError",
    "ContractError",
    "NumericError",
    "ConfigError",
    "IngestError",
    "DecodeError",
    "HashMismatchError",
]

__version__ = "0.1.0"
