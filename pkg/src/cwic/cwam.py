"""Cross-scale window attention: fine windows query coarse overlapping blocks.

The input map is split into non-overlapping w x w windows. A half-resolution
copy is cut into overlapping w x w blocks (stride w/2 after w/2 reflection
padding), one per window; block i spans half-scale rows [i*w/2, i*w/2 + w),
so its fine-scale footprint is the 2w x 2w region starting at the window
origin and the window sits in its top-left quadrant with 4x context around
it. Fine tokens attend to their paired coarse block and the result is added
back residually.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tt
from .errors import ConfigError, ContractError, DimensionError
from .layers import Module
from .tensor import Tensor


def downscale_half(f: Tensor) -> Tensor:
    """Half-resolution view via 2x2 average pooling (dims must be even)."""
    return tt.avg_pool2d(f)


def partition_windows(f: Tensor, w: int):
    """Split (N,C,H,W) into row-major windows: (N*nH*nW, w*w, C)."""
    n, c, h, wd = f.shape
    if h % w or wd % w:
        raise ContractError(f"window partition needs dims divisible by {w}, got {h}x{wd}")
    nh, nw = h // w, wd // w
    t = f.reshape(n, c, nh, w, nw, w)
    t = t.transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(n * nh * nw, w * w, c), (nh, nw)


def merge_windows(windows: Tensor, n: int, c: int, h: int, wd: int, w: int) -> Tensor:
    """Exact inverse of :func:`partition_windows`."""
    nh, nw = h // w, wd // w
    t = windows.reshape(n, nh, nw, w, w, c)
    t = t.transpose(0, 5, 1, 3, 2, 4)
    return t.reshape(n, c, h, wd)


def extract_coarse_blocks(f_half: Tensor, w: int) -> Tensor:
    """One w x w half-scale block per fine window: (N*nH*nW, w*w, C).

    The half-scale map is reflection-padded by w/2 per side, then blocks are
    cut at stride w/2; the first sliding position per axis starts inside the
    left padding and is dropped, so block (i,j) covers unpadded half-scale
    rows [i*w/2, i*w/2 + w).
    """
    if w < 2 or w % 2:
        raise ConfigError(f"window size must be even and >= 2, got {w}")
    half = w // 2
    n, c, h2, w2 = f_half.shape
    if h2 % half or w2 % half:
        raise ContractError(
            f"half-scale dims {h2}x{w2} not aligned to stride {half}")
    rid = np.pad(np.arange(h2), (half, half), mode="reflect")
    cid = np.pad(np.arange(w2), (half, half), mode="reflect")
    padded = tt.gather2d(f_half, rid, cid)
    blocks = tt.unfold2d(padded, w, half)
    blocks = blocks[:, :, 1:, 1:, :, :]
    nh, nw = h2 // half, w2 // half
    t = blocks.transpose(0, 2, 3, 4, 5, 1)
    return t.reshape(n * nh * nw, w * w, c)


def attention_core(q: Tensor, k: Tensor, v: Tensor, heads: int):
    """Multi-head scaled dot-product attention over token batches.

    q is (B, Tq, C); k, v are (B, Tk, C). Returns (output, weights) with
    output (B, Tq, C) and weights (B, heads, Tq, Tk).
    """
    b, tq, c = q.shape
    tk = k.shape[1]
    if c % heads:
        raise ConfigError(f"channels {c} not divisible by {heads} heads")
    d = c // heads
    qh = q.reshape(b, tq, heads, d).transpose(0, 2, 1, 3)
    kh = k.reshape(b, tk, heads, d).transpose(0, 2, 1, 3)
    vh = v.reshape(b, tk, heads, d).transpose(0, 2, 1, 3)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
    weights = tt.softmax(scores, axis=-1)
    out = weights @ vh
    out = out.transpose(0, 2, 1, 3).reshape(b, tq, c)
    return out, weights


class Cwam(Module):
    """Residual cross-scale window attention stage (shape preserving)."""

    def __init__(self, channels: int, window: int = 4, heads: int = 4,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if window < 2 or window % 2:
            raise ConfigError(f"window size must be even and >= 2, got {window}")
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by {heads} heads")
        self.channels = channels
        self.window = window
        self.heads = heads
        scale = math.sqrt(1.0 / channels)

        def proj():
            return Tensor((rng.standard_normal((channels, channels)) * scale)
                          .astype(np.float32), requires_grad=True)

        self.wq, self.wk, self.wv, self.wo = proj(), proj(), proj(), proj()
        self.bq = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.bk = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.bv = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.bo = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)

    def attend(self, f: Tensor) -> Tensor:
        """The non-residual attention map for f (already window-aligned)."""
        n, c, h, wd = f.shape
        w = self.window
        fine, (nh, nw) = partition_windows(f, w)
        coarse = extract_coarse_blocks(downscale_half(f), w)
        q = fine @ self.wq + self.bq
        k = coarse @ self.wk + self.bk
        v = coarse @ self.wv + self.bv
        att, _ = attention_core(q, k, v, self.heads)
        out = att @ self.wo + self.bo
        return merge_windows(out, n, c, h, wd, w)

    def __call__(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise DimensionError(
                f"cwam expects N x {self.channels} x H x W, got {f.shape}")
        n, c, h, wd = f.shape
        w = self.window
        hp = -(-h // w) * w
        wp = -(-wd // w) * w
        if hp != h or wp != wd:
            rid = np.pad(np.arange(h), (0, hp - h), mode="reflect")
            cid = np.pad(np.arange(wd), (0, wp - wd), mode="reflect")
            fp = tt.gather2d(f, rid, cid)
        else:
            fp = f
        att = self.attend(fp)
        if hp != h or wp != wd:
            att = att[:, :, :h, :wd]
        return f + att
