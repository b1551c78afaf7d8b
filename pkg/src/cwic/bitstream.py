"""Image bitstream container: header, coded hyper-latent, coded latent.

Layout (big-endian):

    magic "CWBS" | u8 version | u32 W | u32 H | u32 padW | u32 padH |
    8-byte config hash | u8 lambda index (0xFF = custom) |
    u32 len(z payload) | z payload | u32 len(y payload) | y payload

The hyper-latent is coded first so the decoder can rebuild (mu, sigma)
before touching the latent payload. The decoder needs only these bytes plus
the checkpoint; reconstruction matches the encoder side bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import entropy
from . import tensor as tt
from .errors import DecodeError, DimensionError, HashMismatchError
from .model import CodecModel, quality_index
from .rangecoder import rc_decode, rc_encode
from .tensor import Tensor

MAGIC = b"CWBS"
VERSION = 1
PAD_MULTIPLE = 64
CUSTOM_LAMBDA = 0xFF

_HEADER = ">4sBIIII8sB"
_HEADER_SIZE = struct.calcsize(_HEADER)


@dataclass
class EncodeInfo:
    width: int
    height: int
    total_bytes: int
    bpp: float
    est_bpp: float
    est_bits_z: float
    est_bits_y: float
    len_z: int
    len_y: int


def pad_image(img: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """Reflect-pad (3, H, W) on the bottom/right to a size multiple."""
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")


def _z_row_of(channels: int, spatial: int) -> np.ndarray:
    return np.repeat(np.arange(channels, dtype=np.int64), spatial)


def _estimated_bits(y_sym, mu, sigma, p_z):
    up = special.ndtr((y_sym + 0.5 - mu) / sigma)
    dn = special.ndtr((y_sym - 0.5 - mu) / sigma)
    p_y = np.maximum(up - dn, entropy.LIKELIHOOD_FLOOR)
    return float(-np.log2(p_y).sum()), float(-np.log2(p_z).sum())


def reconstruct_image(model: CodecModel, y_hat: Tensor,
                      width: int, height: int) -> np.ndarray:
    """Shared decoder tail: synthesis, clamp to [0,1], crop to source dims."""
    with tt.no_grad():
        x_hat, _, _ = model.reconstruct(y_hat)
    out = np.clip(x_hat.data[0], 0.0, 1.0)
    return np.ascontiguousarray(out[:, :height, :width])


def encode_image(img: np.ndarray, model: CodecModel):
    """Compress a (3, H, W) image in [0, 1]; returns (bytes, EncodeInfo)."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) image, got {img.shape}")
    _, height, width = img.shape
    padded = pad_image(img)
    with tt.no_grad():
        x = Tensor(padded[None])
        y = model.encode_latent(x)
        z = model.hyper_encode(y)
        y_sym = np.rint(y.data[0]).astype(np.int64)
        z_sym = np.rint(z.data[0]).astype(np.int64)
        z_hat = Tensor(z_sym[None].astype(np.float32))
        mu, sigma = model.hyper_decode(z_hat)
        p_z = model.prior.likelihood(z_hat).data

    prior_table = entropy.build_prior_tables(model.prior)
    zc = z_sym.shape[0]
    z_bytes = rc_encode(z_sym.ravel(), prior_table,
                        row_of=_z_row_of(zc, z_sym[0].size))

    mu64 = mu.data[0].astype(np.float64)
    sig64 = sigma.data[0].astype(np.float64)
    gauss_table = entropy.build_gaussian_tables(mu64, sig64)
    y_bytes = rc_encode(y_sym.ravel(), gauss_table)

    lam_idx = quality_index(model.cfg.lam, model.cfg.metric)
    header = struct.pack(_HEADER, MAGIC, VERSION, width, height,
                         padded.shape[2], padded.shape[1],
                         model.cfg.hash_bytes(),
                         CUSTOM_LAMBDA if lam_idx is None else lam_idx)
    data = (header
            + struct.pack(">I", len(z_bytes)) + z_bytes
            + struct.pack(">I", len(y_bytes)) + y_bytes)

    est_y, est_z = _estimated_bits(y_sym.astype(np.float64), mu64, sig64, p_z)
    info = EncodeInfo(width=width, height=height, total_bytes=len(data),
                      bpp=len(data) * 8.0 / (width * height),
                      est_bpp=(est_y + est_z) / (width * height),
                      est_bits_z=est_z, est_bits_y=est_y,
                      len_z=len(z_bytes), len_y=len(y_bytes))
    return data, info


def _parse_header(data: bytes):
    if len(data) < _HEADER_SIZE:
        raise DecodeError("bitstream shorter than its header")
    magic, version, width, height, pad_w, pad_h, cfg_hash, lam_idx = (
        struct.unpack_from(_HEADER, data))
    if magic != MAGIC:
        raise DecodeError("not a codec bitstream (bad magic)")
    if version != VERSION:
        raise DecodeError(f"unsupported bitstream version {version}")
    if width < 1 or height < 1 or pad_w % PAD_MULTIPLE or pad_h % PAD_MULTIPLE:
        raise DecodeError("corrupt header dimensions")
    if pad_w < width or pad_h < height:
        raise DecodeError("padded dims smaller than image dims")
    return width, height, pad_w, pad_h, cfg_hash, lam_idx


def _take_payload(data: bytes, pos: int):
    if pos + 4 > len(data):
        raise DecodeError("bitstream truncated at payload length")
    (n,) = struct.unpack_from(">I", data, pos)
    pos += 4
    if pos + n > len(data):
        raise DecodeError("bitstream truncated inside payload")
    return data[pos:pos + n], pos + n


def decode_image(data: bytes, model: CodecModel) -> np.ndarray:
    """Decompress to a (3, H, W) float32 image in [0, 1]."""
    width, height, pad_w, pad_h, cfg_hash, _ = _parse_header(data)
    if cfg_hash != model.cfg.hash_bytes():
        raise HashMismatchError(
            "bitstream was produced under a different model configuration")
    z_bytes, pos = _take_payload(data, _HEADER_SIZE)
    y_bytes, pos = _take_payload(data, pos)
    if pos != len(data):
        raise DecodeError("trailing bytes after bitstream payload")

    zc = model.cfg.hyper
    zh, zw = pad_h // 64, pad_w // 64
    m = model.cfg.m
    yh, yw = pad_h // 16, pad_w // 16

    prior_table = entropy.build_prior_tables(model.prior)
    z_sym = rc_decode(z_bytes, prior_table, zc * zh * zw,
                      row_of=_z_row_of(zc, zh * zw))
    z_hat = Tensor(z_sym.reshape(1, zc, zh, zw).astype(np.float32))
    with tt.no_grad():
        mu, sigma = model.hyper_decode(z_hat)
    gauss_table = entropy.build_gaussian_tables(
        mu.data[0].astype(np.float64), sigma.data[0].astype(np.float64))
    y_sym = rc_decode(y_bytes, gauss_table, m * yh * yw)
    y_hat = Tensor(y_sym.reshape(1, m, yh, yw).astype(np.float32))
    return reconstruct_image(model, y_hat, width, height)
