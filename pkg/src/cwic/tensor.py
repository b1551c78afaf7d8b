"""Dense NCHW tensor engine with reverse-mode automatic differentiation.

Values live in numpy arrays (float32 by default, float64 for gradient
checks). Every operation validates that its output is finite; a NaN/Inf is
reported as a :class:`~cwic.errors.NumericError` naming the producing op
rather than propagated as a value. Gradients accumulate additively into the
``grad`` slot of leaf tensors until explicitly cleared.
"""

from __future__ import annotations

import os

import numpy as np
from scipy import special

from .errors import DimensionError, NumericError, PaddingError

_FINITE_CHECKS = os.environ.get("CWIC_FINITE_CHECKS", "1") != "0"
_GRAD_ENABLED = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle per-op finiteness validation; returns the previous setting."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


class no_grad:
    """Context manager that disables graph construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-d value with an optional gradient slot and autodiff history.

    The data buffer is treated as immutable once the tensor participates in
    a graph; only ``grad`` mutates (and parameter data, under the
    optimizer's single-writer contract). Gradients are retained on leaf
    tensors only.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float32, requires_grad=False):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value, dtype=np.float32, requires_grad=False):
        return Tensor(np.full(shape, value, dtype=dtype), requires_grad=requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, op={self.op!r})"

    def __len__(self):
        return self.data.shape[0]

    # -- graph plumbing --------------------------------------------------------

    def _accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar loss.

        Gradients add into ``grad`` on every reachable leaf with
        ``requires_grad``; call :meth:`zero_grad` between steps to reset.
        """
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar loss, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite loss in op '{self.op}'")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node._accum_grad(g)
                continue
            if _FINITE_CHECKS and not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient flowing into op '{node.op}'")
            for parent, pg in node._backward(g):
                if not (parent.requires_grad or parent._backward is not None):
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = np.array(pg, dtype=parent.data.dtype, copy=True)
                else:
                    acc += pg.astype(parent.data.dtype, copy=False)


def _result(data, parents, backward, op):
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _wrap_pair(a, b):
    """Wrap operands; a bare scalar adopts the tensor operand's dtype."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if ta and not tb:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if tb and not ta:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _wrap(a), _wrap(b)


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b):
    a, b = _wrap_pair(a, b)
    try:
        data = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"add: incompatible shapes {a.shape} vs {b.shape}") from e

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _result(data, (a, b), bw, "add")


def sub(a, b):
    a, b = _wrap_pair(a, b)
    try:
        data = a.data - b.data
    except ValueError as e:
        raise DimensionError(f"sub: incompatible shapes {a.shape} vs {b.shape}") from e

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _result(data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _wrap_pair(a, b)
    try:
        data = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"mul: incompatible shapes {a.shape} vs {b.shape}") from e

    def bw(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return _result(data, (a, b), bw, "mul")


def div(a, b):
    a, b = _wrap_pair(a, b)
    try:
        data = a.data / b.data
    except ValueError as e:
        raise DimensionError(f"div: incompatible shapes {a.shape} vs {b.shape}") from e

    def bw(g):
        return ((a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    return _result(data, (a, b), bw, "div")


def neg(a):
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: ((a, -g),), "neg")


def pow_(a, p):
    """``a ** p`` for scalar ``p`` (tensor exponents are not needed here)."""
    a = _wrap(a)
    p = float(p)
    data = a.data ** p

    def bw(g):
        return ((a, g * p * a.data ** (p - 1.0)),)

    return _result(data, (a,), bw, "pow")


def sqrt(a):
    a = _wrap(a)
    data = np.sqrt(a.data)

    def bw(g):
        return ((a, g * 0.5 / data),)

    return _result(data, (a,), bw, "sqrt")


def exp(a):
    a = _wrap(a)
    data = np.exp(a.data)

    def bw(g):
        return ((a, g * data),)

    return _result(data, (a,), bw, "exp")


def log(a):
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bw(g):
        return ((a, g / a.data),)

    return _result(data, (a,), bw, "log")


def abs_(a):
    a = _wrap(a)
    data = np.abs(a.data)

    def bw(g):
        return ((a, g * np.sign(a.data)),)

    return _result(data, (a,), bw, "abs")


def clamp_min(a, floor):
    a = _wrap(a)
    floor = float(floor)
    data = np.maximum(a.data, floor)

    def bw(g):
        return ((a, g * (a.data >= floor)),)

    return _result(data, (a,), bw, "clamp_min")


def clamp(a, lo, hi):
    a = _wrap(a)
    data = np.clip(a.data, lo, hi)

    def bw(g):
        return ((a, g * ((a.data >= lo) & (a.data <= hi))),)

    return _result(data, (a,), bw, "clamp")


def round_(a):
    """Nearest integer, ties to even. Detached: no gradient path."""
    a = _wrap(a)
    return Tensor(np.rint(a.data))


def round_ste(a):
    """Rounded forward value with straight-through (identity) gradient."""
    a = _wrap(a)
    data = np.rint(a.data)

    def bw(g):
        return ((a, g),)

    return _result(data, (a,), bw, "round_ste")


def erf(a):
    a = _wrap(a)
    data = special.erf(a.data)
    coeff = 2.0 / np.sqrt(np.pi)

    def bw(g):
        return ((a, (g * coeff * np.exp(-a.data * a.data)).astype(a.data.dtype)),)

    return _result(data, (a,), bw, "erf")


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)

    def bw(g):
        return ((a, g * (1.0 - data * data)),)

    return _result(data, (a,), bw, "tanh")


def sigmoid(a):
    a = _wrap(a)
    data = special.expit(a.data)

    def bw(g):
        return ((a, g * data * (1.0 - data)),)

    return _result(data, (a,), bw, "sigmoid")


def softplus(a):
    a = _wrap(a)
    data = np.logaddexp(0.0, a.data).astype(a.data.dtype)

    def bw(g):
        return ((a, g * special.expit(a.data)),)

    return _result(data, (a,), bw, "softplus")


def leaky_relu(a, slope: float = 0.01):
    a = _wrap(a)
    data = np.where(a.data >= 0, a.data, slope * a.data).astype(a.data.dtype)

    def bw(g):
        return ((a, g * np.where(a.data >= 0, 1.0, slope).astype(a.data.dtype)),)

    return _result(data, (a,), bw, "leaky_relu")


# -- reductions ---------------------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    """Sum with 64-bit accumulation regardless of storage dtype."""
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def bw(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g2, axis)
        return ((a, np.broadcast_to(g2, a.shape)),)

    return _result(data, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = 1
        for ax in axes:
            n *= a.shape[ax]

    def bw(g):
        g2 = g
        if axis is not None and not keepdims:
            g2 = np.expand_dims(g2, axis)
        return ((a, (np.broadcast_to(g2, a.shape) / n).astype(a.data.dtype)),)

    return _result(data, (a,), bw, "mean")


def softmax(a, axis: int = -1):
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = (e / e.sum(axis=axis, keepdims=True, dtype=np.float64)).astype(a.data.dtype)

    def bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return ((a, data * (g - inner)),)

    return _result(data, (a,), bw, "softmax")


# -- shape manipulation ---------------------------------------------------------


def reshape(a, shape):
    a = _wrap(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from e
    orig = a.shape

    def bw(g):
        return ((a, g.reshape(orig)),)

    return _result(data, (a,), bw, "reshape")


def transpose(a, axes):
    a = _wrap(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return ((a, g.transpose(inv)),)

    return _result(data, (a,), bw, "transpose")


def concat(tensors, axis: int = 0):
    tensors = [_wrap(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat: incompatible shapes along axis {axis}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, pieces))

    return _result(data, tuple(tensors), bw, "concat")


def getitem(a, index):
    """Basic and advanced indexing; duplicated indices accumulate."""
    a = _wrap(a)
    data = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return ((a, full),)

    return _result(data, (a,), bw, "getitem")


def matmul(a, b):
    a, b = _wrap_pair(a, b)
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}") from e

    def bw(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return ((a, _unbroadcast(ga, a.shape)), (b, _unbroadcast(gb, b.shape)))

    return _result(data, (a, b), bw, "matmul")


# -- spatial ops ----------------------------------------------------------------


def pad2d(a, pads, mode: str = "zero"):
    """Pad the two trailing (spatial) axes. pads = (top, bottom, left, right)."""
    a = _wrap(a)
    if a.ndim != 4:
        raise DimensionError(f"pad2d expects NCHW input, got {a.shape}")
    pt, pb, pl, pr = (int(p) for p in pads)
    if min(pt, pb, pl, pr) < 0:
        raise PaddingError("negative padding")
    N, C, H, W = a.shape
    if mode == "zero":
        data = np.pad(a.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))

        def bw(g):
            return ((a, g[:, :, pt:pt + H, pl:pl + W]),)

        return _result(data, (a,), bw, "pad2d")
    if mode != "reflect":
        raise PaddingError(f"unknown pad mode {mode!r}")
    if max(pt, pb) >= H or max(pl, pr) >= W:
        raise PaddingError(
            f"reflect padding {pads} too large for spatial extent {H}x{W}")
    rid = np.pad(np.arange(H), (pt, pb), mode="reflect")
    cid = np.pad(np.arange(W), (pl, pr), mode="reflect")
    data = a.data[:, :, rid[:, None], cid[None, :]]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (slice(None), slice(None), rid[:, None], cid[None, :]), g)
        return ((a, full),)

    return _result(data, (a,), bw, "pad2d")


def avg_pool2d(a):
    """Non-overlapping 2x2 mean pooling; spatial dims must be even."""
    a = _wrap(a)
    if a.ndim != 4:
        raise DimensionError(f"avg_pool2d expects NCHW input, got {a.shape}")
    N, C, H, W = a.shape
    if H % 2 or W % 2:
        raise DimensionError(f"avg_pool2d requires even spatial dims, got {H}x{W}")
    data = a.data.reshape(N, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.asarray(0.25, dtype=a.data.dtype)
        return ((a, gx),)

    return _result(data, (a,), bw, "avg_pool2d")


def gather2d(a, rid, cid):
    """Index the spatial axes by row/col maps (duplicates allowed).

    Output is (N, C, len(rid), len(cid)); the backward pass scatter-adds
    into duplicated source positions, so this realizes arbitrary replicating
    pads (reflection with multiple bounces, edge repeats).
    """
    a = _wrap(a)
    if a.ndim != 4:
        raise DimensionError(f"gather2d expects NCHW input, got {a.shape}")
    rid = np.asarray(rid, dtype=np.intp)
    cid = np.asarray(cid, dtype=np.intp)
    idx = (slice(None), slice(None), rid[:, None], cid[None, :])
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _result(data, (a,), bw, "gather2d")


def unfold2d(a, block: int, stride: int):
    """Extract sliding square blocks: (N,C,H,W) -> (N,C,nH,nW,block,block).

    Blocks may overlap; the backward pass scatter-adds overlapping
    contributions.
    """
    a = _wrap(a)
    if a.ndim != 4:
        raise DimensionError(f"unfold2d expects NCHW input, got {a.shape}")
    N, C, H, W = a.shape
    if block > H or block > W:
        raise DimensionError(f"unfold2d: block {block} exceeds extent {H}x{W}")
    nH = (H - block) // stride + 1
    nW = (W - block) // stride + 1
    ir = np.arange(nH)[:, None] * stride + np.arange(block)[None, :]
    ic = np.arange(nW)[:, None] * stride + np.arange(block)[None, :]
    idx = (slice(None), slice(None), ir[:, None, :, None], ic[None, :, None, :])
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    return _result(data, (a,), bw, "unfold2d")


def _im2col(xp, k, stride, H_out, W_out):
    sN, sC, sH, sW = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(xp.shape[0], xp.shape[1], k, k, H_out, W_out),
        strides=(sN, sC, sH, sW, sH * stride, sW * stride),
        writeable=False,
    )


def _conv2d_data(x, w, b, stride, pad):
    N, Cin, H, W = x.shape
    Cout, Cw, k, k2 = w.shape
    if Cw != Cin or k != k2:
        raise DimensionError(
            f"conv2d: weight {w.shape} incompatible with input {x.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if Hp < k or Wp < k:
        raise DimensionError(f"conv2d: {Hp}x{Wp} input smaller than {k}x{k} kernel")
    H_out = (Hp - k) // stride + 1
    W_out = (Wp - k) // stride + 1
    cols = _im2col(xp, k, stride, H_out, W_out)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out, xp, (H_out, W_out)


def _conv2d_weight_grad(gout, xp, k, stride, H_out, W_out):
    cols = _im2col(xp, k, stride, H_out, W_out)
    return np.tensordot(gout, cols, axes=([0, 2, 3], [0, 4, 5]))


def _op_pair(output_padding):
    if isinstance(output_padding, tuple):
        return output_padding
    return (output_padding, output_padding)


def _convt_data(x, w, b, stride, pad, output_padding):
    N, Cin, H, W = x.shape
    Cw, Cout, k, k2 = w.shape
    oph, opw = _op_pair(output_padding)
    if Cw != Cin or k != k2:
        raise DimensionError(
            f"conv2d_transpose: weight {w.shape} incompatible with input {x.shape}")
    H_out = stride * (H - 1) + k - 2 * pad + oph
    W_out = stride * (W - 1) + k - 2 * pad + opw
    if H_out <= 0 or W_out <= 0:
        raise DimensionError(f"conv2d_transpose: empty output {H_out}x{W_out}")
    H_big = stride * (H - 1) + k + oph
    W_big = stride * (W - 1) + k + opw
    y = np.zeros((N, Cout, H_big, W_big), dtype=x.dtype)
    for a in range(k):
        for c in range(k):
            t = np.tensordot(x, w[:, :, a, c], axes=([1], [0]))
            y[:, :, a:a + stride * (H - 1) + 1:stride,
              c:c + stride * (W - 1) + 1:stride] += t.transpose(0, 3, 1, 2)
    y = np.ascontiguousarray(y[:, :, pad:pad + H_out, pad:pad + W_out])
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y


def _convt_input_grad(gout, w, x_shape, stride, pad, output_padding):
    N, Cin, H, W = x_shape
    _, Cout, k, _ = w.shape
    oph, opw = _op_pair(output_padding)
    H_out = stride * (H - 1) + k - 2 * pad + oph
    W_out = stride * (W - 1) + k - 2 * pad + opw
    H_big = stride * (H - 1) + k + oph
    W_big = stride * (W - 1) + k + opw
    g_big = np.zeros((N, Cout, H_big, W_big), dtype=gout.dtype)
    g_big[:, :, pad:pad + H_out, pad:pad + W_out] = gout
    gx = np.zeros(x_shape, dtype=gout.dtype)
    for a in range(k):
        for c in range(k):
            gb = g_big[:, :, a:a + stride * (H - 1) + 1:stride,
                       c:c + stride * (W - 1) + 1:stride]
            gx += np.tensordot(gb, w[:, :, a, c], axes=([1], [1])).transpose(0, 3, 1, 2)
    return gx


def _convt_weight_grad(gout, x, w_shape, stride, pad, output_padding):
    N, Cin, H, W = x.shape
    _, Cout, k, _ = w_shape
    oph, opw = _op_pair(output_padding)
    H_out = stride * (H - 1) + k - 2 * pad + oph
    W_out = stride * (W - 1) + k - 2 * pad + opw
    H_big = stride * (H - 1) + k + oph
    W_big = stride * (W - 1) + k + opw
    g_big = np.zeros((N, Cout, H_big, W_big), dtype=gout.dtype)
    g_big[:, :, pad:pad + H_out, pad:pad + W_out] = gout
    gw = np.zeros(w_shape, dtype=gout.dtype)
    for a in range(k):
        for c in range(k):
            gb = g_big[:, :, a:a + stride * (H - 1) + 1:stride,
                       c:c + stride * (W - 1) + 1:stride]
            gw[:, :, a, c] = np.tensordot(x, gb, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0, pad_mode: str = "zero"):
    """2-D cross-correlation over NCHW input.

    Weight layout is (C_out, C_in, k, k). With ``pad_mode='reflect'`` the
    input is reflection-padded before a pad-0 convolution, so the gradient
    flows through the reflection.
    """
    if pad_mode == "reflect" and pad > 0:
        x = pad2d(x, (pad, pad, pad, pad), mode="reflect")
        pad = 0
    elif pad_mode not in ("zero", "reflect"):
        raise PaddingError(f"unknown pad mode {pad_mode!r}")
    x, w = _wrap(x), _wrap(w)
    b = _wrap(b) if b is not None else None
    bdata = b.data if b is not None else None
    out, xp, (H_out, W_out) = _conv2d_data(x.data, w.data, bdata, stride, pad)
    k = w.shape[2]
    x_shape = x.shape

    def bw(g):
        oph = x_shape[2] + 2 * pad - k - stride * (H_out - 1)
        opw = x_shape[3] + 2 * pad - k - stride * (W_out - 1)
        gx = _convt_data(g, w.data, None, stride, pad, (oph, opw))
        gw = _conv2d_weight_grad(g, xp, k, stride, H_out, W_out)
        grads = [(x, gx), (w, gw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw, "conv2d")


def conv2d_transpose(x, w, b=None, stride: int = 1, pad: int = 0,
                     output_padding: int = 0):
    """Transposed convolution; the exact adjoint of pad-and-convolve.

    Weight layout is (C_in, C_out, k, k); output spatial size is
    ``stride*(H-1) + k - 2*pad + output_padding``.
    """
    x, w = _wrap(x), _wrap(w)
    b = _wrap(b) if b is not None else None
    bdata = b.data if b is not None else None
    out = _convt_data(x.data, w.data, bdata, stride, pad, output_padding)
    x_shape, w_shape = x.shape, w.shape

    def bw(g):
        gx = _convt_input_grad(g, w.data, x_shape, stride, pad, output_padding)
        gw = _convt_weight_grad(g, x.data, w_shape, stride, pad, output_padding)
        grads = [(x, gx), (w, gw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, bw, "conv2d_transpose")


# -- operator sugar ---------------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__pow__ = lambda self, p: pow_(self, p)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__getitem__ = lambda self, idx: getitem(self, idx)
Tensor.sum = lambda self, axis=None, keepdims=False: sum_(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.reshape = lambda self, *shape: reshape(
    self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
Tensor.transpose = lambda self, *axes: transpose(
    self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)
