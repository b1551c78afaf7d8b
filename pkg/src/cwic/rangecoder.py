"""Byte-oriented range coder over quantized CDF tables.

Carry-aware encoder with 64-bit low / 32-bit range and byte-wise
renormalization; streams are plain bytes with ~6 bytes of coder overhead
plus a 16-bit trailing sentinel that turns most corruptions and truncations
into decode errors instead of silent garbage.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from ._kernels import BACKEND, STATUS_OK, STATUS_SENTINEL, STATUS_TRUNCATED
from .entropy import CdfTable
from .errors import ContractError, DecodeError

__all__ = ["rc_encode", "rc_decode", "BACKEND"]


def _prep(values, table: CdfTable, row_of):
    values = np.ascontiguousarray(np.asarray(values).ravel(), dtype=np.int64)
    if row_of is None:
        if table.num_rows != values.size:
            raise ContractError(
                f"{values.size} symbols but {table.num_rows} table rows; pass row_of")
        row_of = np.arange(values.size, dtype=np.int64)
    else:
        row_of = np.ascontiguousarray(np.asarray(row_of).ravel(), dtype=np.int64)
        if row_of.size != values.size:
            raise ContractError("row_of length does not match symbol count")
        if row_of.size and (row_of.min() < 0 or row_of.max() >= table.num_rows):
            raise ContractError("row_of index out of table range")
    return values, row_of


def rc_encode(values, table: CdfTable, row_of=None) -> bytes:
    """Encode integer symbol values under their CDF rows.

    Without an escape bin every value must lie inside its row's range;
    with one, out-of-range values cost the escape symbol plus 32 raw bits.
    """
    values, row_of = _prep(values, table, row_of)
    if not table.escape:
        widths = (table.row_starts[row_of + 1] - table.row_starts[row_of]) - 1
        k = values - table.sym_lo[row_of]
        if ((k < 0) | (k >= widths)).any():
            raise ContractError("symbol outside table range and no escape bin")
    out = np.zeros(7 * values.size + 64, dtype=np.uint8)
    n = _kernels.rc_encode_core(values, row_of, table.row_starts, table.cdf,
                                table.sym_lo, table.escape, out)
    if n < 0:
        raise ContractError("range coder output exceeded its worst-case bound")
    return bytes(out[:n])


def rc_decode(data: bytes, table: CdfTable, n: int, row_of=None) -> np.ndarray:
    """Decode n symbol values; raises DecodeError on truncation/corruption."""
    if n < 0:
        raise ContractError("negative symbol count")
    if row_of is None:
        if table.num_rows != n:
            raise ContractError(
                f"{n} symbols but {table.num_rows} table rows; pass row_of")
        row_of = np.arange(n, dtype=np.int64)
    else:
        row_of = np.ascontiguousarray(np.asarray(row_of).ravel(), dtype=np.int64)
        if row_of.size != n:
            raise ContractError("row_of length does not match symbol count")
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    values = np.zeros(n, dtype=np.int64)
    status = _kernels.rc_decode_core(buf, n, row_of, table.row_starts, table.cdf,
                                     table.sym_lo, table.escape, values)
    if status == STATUS_TRUNCATED:
        raise DecodeError("range-coded stream truncated")
    if status == STATUS_SENTINEL:
        raise DecodeError("range-coded stream failed its final-state check")
    if status != STATUS_OK:
        raise DecodeError(f"range decoder returned status {status}")
    return values
