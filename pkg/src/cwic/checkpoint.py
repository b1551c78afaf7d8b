"""Checkpoint container: config, parameters, optional optimizer state.

A binary little-endian format with explicit magic and version so checkpoints
restore bit-exactly: raw float bytes round trip with no text conversion.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError
from .model import CodecModel, ModelConfig

MAGIC = b"CWCK"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DecodeError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    code = _DTYPE_CODES.get(np.dtype(arr.dtype))
    if code is None:
        raise DecodeError(f"unsupported dtype {arr.dtype} for '{name}'")
    nb = name.encode("utf8")
    head = struct.pack("<H", len(nb)) + nb
    head += struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _unpack_array(r: _Reader):
    (nlen,) = r.unpack("<H")
    name = r.take(nlen).decode("utf8")
    code, ndim = r.unpack("<BB")
    if code not in _DTYPES:
        raise DecodeError(f"unknown dtype code {code}")
    shape = r.unpack(f"<{ndim}I") if ndim else ()
    dt = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
    return name, arr.astype(dt.newbyteorder("=")).copy()


def _pack_group(arrays: dict) -> bytes:
    out = struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        out += _pack_array(name, arr)
    return out


def _unpack_group(r: _Reader) -> dict:
    (n,) = r.unpack("<I")
    return dict(_unpack_array(r) for _ in range(n))


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    step: int
    optimizer: dict | None


def save_checkpoint(path, model: CodecModel, step: int = 0, optimizer=None) -> None:
    cfg_json = model.cfg.to_json().encode("utf8")
    out = [MAGIC, struct.pack("<IQ", VERSION, step),
           struct.pack("<I", len(cfg_json)), cfg_json,
           _pack_group({k: p.data for k, p in model.named_params()})]
    if optimizer is None:
        out.append(struct.pack("<B", 0))
    else:
        state = optimizer.state_dict()
        scalars = json.dumps({k: state[k] for k in
                              ("lr", "beta1", "beta2", "eps", "step_count")}).encode("utf8")
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<I", len(scalars)) + scalars)
        out.append(_pack_group(state["m"]))
        out.append(_pack_group(state["v"]))
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != MAGIC:
        raise DecodeError("not a checkpoint file (bad magic)")
    version, step = r.unpack("<IQ")
    if version != VERSION:
        raise DecodeError(f"unsupported checkpoint version {version}")
    (clen,) = r.unpack("<I")
    config = ModelConfig.from_json(r.take(clen).decode("utf8"))
    params = _unpack_group(r)
    (has_opt,) = r.unpack("<B")
    opt_state = None
    if has_opt == 1:
        (slen,) = r.unpack("<I")
        opt_state = json.loads(r.take(slen).decode("utf8"))
        opt_state["m"] = _unpack_group(r)
        opt_state["v"] = _unpack_group(r)
    elif has_opt != 0:
        raise DecodeError(f"bad optimizer flag {has_opt}")
    if r.pos != len(r.buf):
        raise DecodeError("trailing bytes after checkpoint payload")
    return Checkpoint(config=config, params=params, step=step, optimizer=opt_state)


def restore_params(model: CodecModel, params: dict) -> None:
    own = dict(model.named_params())
    if set(own) != set(params):
        missing = sorted(set(own) - set(params))
        extra = sorted(set(params) - set(own))
        raise DecodeError(f"parameter set mismatch: missing={missing} extra={extra}")
    for name, p in own.items():
        arr = params[name]
        if arr.shape != p.data.shape:
            raise DecodeError(
                f"shape mismatch for '{name}': {arr.shape} vs {p.data.shape}")
        p.data = arr.astype(p.data.dtype, copy=True)


def load_model(path) -> tuple:
    """Rebuild a model from a checkpoint; returns (model, checkpoint)."""
    ck = load_checkpoint(path)
    model = CodecModel(ck.config)
    restore_params(model, ck.params)
    return model, ck
