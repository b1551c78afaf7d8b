"""Quality metrics: MSE, PSNR, multiscale SSIM and their dB conversions.

MS-SSIM is built from tensor-engine ops so it can serve as a training
distortion; PSNR and the dB conversions are plain float helpers used by the
evaluation harness.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tt
from .errors import ContractError, DimensionError
from .tensor import Tensor

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WIN_SIZE = 11
_WIN_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03
_PSNR_CAP = 100.0
_MSE_FLOOR = 1e-10


def mse(x: Tensor, x_hat: Tensor) -> Tensor:
    """Mean squared error as a differentiable scalar."""
    if x.shape != x_hat.shape:
        raise DimensionError(f"mse: shapes differ {x.shape} vs {x_hat.shape}")
    d = x - x_hat
    return (d * d).mean()


def psnr(x, x_hat) -> float:
    """Peak SNR in dB over [0,1] values, capped at 100 dB for near-zero error."""
    a = x.data if isinstance(x, Tensor) else np.asarray(x)
    b = x_hat.data if isinstance(x_hat, Tensor) else np.asarray(x_hat)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes differ {a.shape} vs {b.shape}")
    err = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if err < _MSE_FLOOR:
        return _PSNR_CAP
    return 10.0 * math.log10(1.0 / err)


def msssim_db(value: float) -> float:
    """The -10*log10(1 - MS-SSIM) convention, capped near unity."""
    v = min(float(value), 1.0 - 1e-10)
    return -10.0 * math.log10(1.0 - v)


def _gaussian_window() -> np.ndarray:
    half = (_WIN_SIZE - 1) / 2.0
    g = np.exp(-((np.arange(_WIN_SIZE) - half) ** 2) / (2.0 * _WIN_SIGMA ** 2))
    w = np.outer(g, g)
    return (w / w.sum()).astype(np.float64)


def _blur(x: Tensor, win: np.ndarray) -> Tensor:
    c = x.shape[1]
    k = win.shape[0]
    weight = np.zeros((c, c, k, k), dtype=x.dtype)
    for i in range(c):
        weight[i, i] = win
    return tt.conv2d(x, Tensor(weight), stride=1, pad=0)


def _ssim_terms(x: Tensor, y: Tensor, win: np.ndarray):
    """Mean luminance and contrast-structure terms over valid positions."""
    c1 = _K1 * _K1
    c2 = _K2 * _K2
    mx = _blur(x, win)
    my = _blur(y, win)
    mxx = _blur(x * x, win)
    myy = _blur(y * y, win)
    mxy = _blur(x * y, win)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    lum = (mx * my * 2.0 + c1) / (mx * mx + my * my + c1)
    cs = (cov * 2.0 + c2) / (vx + vy + c2)
    return lum.mean(), cs.mean()


def max_scales(height: int, width: int) -> int:
    """Largest usable scale count: each halving must keep min dim >= 11."""
    s = 0
    m = min(height, width)
    while m >= _WIN_SIZE and s < len(MSSSIM_WEIGHTS):
        s += 1
        m //= 2
    return s


def _downsample(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        x = tt.pad2d(x, (0, h % 2, 0, w % 2), mode="reflect")
    return tt.avg_pool2d(x)


def ms_ssim(x: Tensor, x_hat: Tensor, scales: int | None = None) -> Tensor:
    """Multiscale SSIM in (0,1], differentiable.

    Contrast-structure terms multiply across scales; luminance enters at the
    coarsest. Weights are renormalized to the scale count in use so reduced
    desk-size images stay comparable.
    """
    if x.shape != x_hat.shape:
        raise DimensionError(f"ms_ssim: shapes differ {x.shape} vs {x_hat.shape}")
    if x.ndim != 4:
        raise DimensionError(f"ms_ssim expects NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    allowed = max_scales(h, w)
    if allowed < 1:
        raise ContractError(f"image {h}x{w} smaller than the {_WIN_SIZE}px window")
    if scales is None:
        scales = allowed
    elif scales < 1 or scales > len(MSSSIM_WEIGHTS):
        raise ContractError(f"scales must be in 1..{len(MSSSIM_WEIGHTS)}")
    elif scales > allowed:
        raise ContractError(
            f"image {h}x{w} supports {allowed} scales, requested {scales}")
    weights = np.asarray(MSSSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()
    win = _gaussian_window().astype(x.dtype)

    result = None
    a, b = x, x_hat
    for s in range(scales):
        lum, cs = _ssim_terms(a, b, win)
        if s < scales - 1:
            term = tt.pow_(tt.clamp_min(cs, 1e-12), float(weights[s]))
            a, b = _downsample(a), _downsample(b)
        else:
            term = tt.pow_(tt.clamp_min(lum * cs, 1e-12), float(weights[s]))
        result = term if result is None else result * term
    return result
