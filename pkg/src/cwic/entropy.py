"""Likelihood models and quantized CDF tables for the range coder.

The latent y is coded under a per-element Gaussian (mu, sigma) predicted by
the hyper-synthesis; the hyper-latent z under a learned per-channel
factorized prior. Both reduce to integer CDF rows with 16-bit total mass
that the encoder and decoder rebuild independently from model parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import tensor as tt
from .errors import ContractError
from .layers import Module
from .tensor import Tensor

SQRT2 = math.sqrt(2.0)
LIKELIHOOD_FLOOR = 2.0 ** -50
CDF_PRECISION = 16
CDF_TOTAL = 1 << CDF_PRECISION
TAIL_MASS = 2.0 ** -9
# per-side tail quantile: symbols beyond mu +/- TAIL_T*sigma go to the escape bin
TAIL_T = float(special.ndtri(1.0 - TAIL_MASS / 2.0))
SIGMA_MIN = 0.11
# cap used only when sizing symbol ranges; probabilities always use true sigma
_RANGE_SIGMA_CAP = 24.0


def gaussian_likelihood(y_hat: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """P(round(Y) == y_hat) for Y ~ N(mu, sigma^2), floored at 2^-50."""
    up = (y_hat - mu + 0.5) / (sigma * SQRT2)
    dn = (y_hat - mu - 0.5) / (sigma * SQRT2)
    p = (tt.erf(up) - tt.erf(dn)) * 0.5
    return tt.clamp_min(p, LIKELIHOOD_FLOOR)


def rate_bits(p: Tensor) -> Tensor:
    """Total information content in bits: sum of -log2 p."""
    return tt.sum_(tt.log(p)) * (-1.0 / math.log(2.0))


def bpp(bits: float, width: int, height: int) -> float:
    """Bits per pixel against the original (unpadded) pixel count."""
    return float(bits) / (width * height)


class FactorizedPrior(Module):
    """Learned per-channel monotone CDF for the hyper-latent.

    Each channel owns a small chain of monotone maps (softplus-positive
    matrices, bounded tanh perturbations, final sigmoid); the symbol
    probability is c(z+0.5) - c(z-0.5).
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.filters = tuple(filters)
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        self.matrices = []
        self.biases = []
        self.factors = []
        for i in range(len(dims) - 1):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            m = np.full((channels, dims[i + 1], dims[i]), init, dtype=np.float32)
            self.matrices.append(Tensor(m, requires_grad=True))
            b = rng.uniform(-0.5, 0.5, (channels, dims[i + 1], 1)).astype(np.float32)
            self.biases.append(Tensor(b, requires_grad=True))
            if i < len(dims) - 2:
                a = np.zeros((channels, dims[i + 1], 1), dtype=np.float32)
                self.factors.append(Tensor(a, requires_grad=True))

    def named_params(self, prefix: str = ""):
        for i, m in enumerate(self.matrices):
            yield f"{prefix}matrix{i}", m
        for i, b in enumerate(self.biases):
            yield f"{prefix}bias{i}", b
        for i, a in enumerate(self.factors):
            yield f"{prefix}factor{i}", a

    def _cdf(self, x: Tensor) -> Tensor:
        """Monotone CDF on (C, 1, L) points, differentiable."""
        u = x
        last = len(self.matrices) - 1
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            u = tt.softplus(m) @ u + b
            if i < last:
                u = u + tt.tanh(self.factors[i]) * tt.tanh(u)
        return tt.sigmoid(u)

    def likelihood(self, z_hat: Tensor) -> Tensor:
        """P(round(Z) == z_hat) per element, shape preserved."""
        n, c, h, w = z_hat.shape
        if c != self.channels:
            raise ContractError(
                f"prior has {self.channels} channels, got input with {c}")
        flat = z_hat.transpose(1, 0, 2, 3).reshape(c, 1, n * h * w)
        p = self._cdf(flat + 0.5) - self._cdf(flat - 0.5)
        p = tt.clamp_min(p, LIKELIHOOD_FLOOR)
        return p.reshape(c, n, h, w).transpose(1, 0, 2, 3)

    def cdf_numpy(self, x: np.ndarray) -> np.ndarray:
        """Float64 CDF evaluation on a (C, L) grid (table construction path)."""
        u = np.asarray(x, dtype=np.float64)[:, None, :]
        last = len(self.matrices) - 1
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            w = np.logaddexp(0.0, m.data.astype(np.float64))
            u = w @ u + b.data.astype(np.float64)
            if i < last:
                a = np.tanh(self.factors[i].data.astype(np.float64))
                u = u + a * np.tanh(u)
        return special.expit(u)[:, 0, :]

    def symbol_range(self, tail_half: float = 2.0 ** -10):
        """Per-channel integer bounds [lo, hi] holding all but the tail mass."""
        for radius in (16, 64, 256, 1024, 4096):
            ks = np.arange(-radius, radius + 1, dtype=np.float64)
            grid = np.broadcast_to(ks, (self.channels, ks.size))
            lo_cdf = self.cdf_numpy(grid - 0.5)
            hi_cdf = self.cdf_numpy(grid + 0.5)
            lo_ok = lo_cdf <= tail_half
            hi_ok = hi_cdf >= 1.0 - tail_half
            if not (lo_ok[:, 0].all() and hi_ok[:, -1].all()):
                continue
            lo_idx = lo_ok.shape[1] - 1 - np.argmax(lo_ok[:, ::-1], axis=1)
            hi_idx = np.argmax(hi_ok, axis=1)
            lo = np.minimum(ks[lo_idx].astype(np.int64), 0)
            hi = np.maximum(ks[hi_idx].astype(np.int64), 0)
            return lo, hi
        raise ContractError("prior support exceeds the searchable symbol range")


@dataclass
class CdfTable:
    """Concatenated integer CDF rows with per-row symbol offsets.

    Row r spans cdf[row_starts[r]:row_starts[r+1]], rising from 0 to 65536.
    When ``escape`` is set, the last bin of every row is the escape symbol
    and out-of-range values are carried verbatim as 32 raw bits.
    """

    cdf: np.ndarray
    row_starts: np.ndarray
    sym_lo: np.ndarray
    escape: bool

    @property
    def num_rows(self) -> int:
        return len(self.row_starts) - 1

    def row_width(self, r: int) -> int:
        return int(self.row_starts[r + 1] - self.row_starts[r]) - 1


def quantize_cdf(probs: np.ndarray) -> np.ndarray:
    """Quantize one probability row to an integer CDF totalling 2^16.

    Largest-remainder rounding with a floor of one unit per symbol;
    over-allocation caused by the floor is taken back from the most
    over-represented symbols without dropping any below one unit.
    """
    p = np.asarray(probs, dtype=np.float64).reshape(1, -1)
    masses = _quantize_rows(p, np.ones_like(p, dtype=bool))
    return np.concatenate([[0], np.cumsum(masses[0])]).astype(np.int64)


def _quantize_rows(probs: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Vectorized largest-remainder quantization over masked rows."""
    r, wmax = probs.shape
    if not valid.any(axis=1).all():
        raise ContractError("cdf row with no symbols")
    p = np.where(valid, np.maximum(probs, 0.0), 0.0)
    totals = p.sum(axis=1, keepdims=True)
    if (totals == 0).any():
        # degenerate all-zero row: spread uniformly over valid symbols
        counts = valid.sum(axis=1, keepdims=True)
        p = np.where(valid, 1.0 / counts, 0.0)
        totals = np.ones_like(totals)
    exact = p / totals * CDF_TOTAL
    base = np.floor(exact)
    rem = np.where(valid, exact - base, -1.0)
    base = np.where(valid & (base < 1), 1, base).astype(np.int64)
    deficit = CDF_TOTAL - base.sum(axis=1)

    add_rows = np.nonzero(deficit > 0)[0]
    if add_rows.size:
        # rank remainders descending, index ascending; invalid slots sort last
        order = np.lexsort((np.broadcast_to(np.arange(wmax), (r, wmax)), -rem), axis=1)
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.broadcast_to(np.arange(wmax), (r, wmax)).copy(), axis=1)
        take = ranks < deficit[:, None]
        take &= valid
        base[add_rows] += take[add_rows]
        deficit = CDF_TOTAL - base.sum(axis=1)

    for i in np.nonzero(deficit != 0)[0]:
        need = int(deficit[i])
        over = base[i].astype(np.float64) - exact[i]
        order = np.lexsort((np.arange(wmax), -over))
        j = 0
        while need < 0 and j < wmax * CDF_TOTAL:
            col = order[j % wmax]
            if valid[i, col] and base[i, col] > 1:
                give = min(int(base[i, col]) - 1, -need)
                base[i, col] -= give
                need += give
            j += 1
        while need > 0:
            base[i, order[0]] += need
            need = 0
        deficit[i] = 0

    if (base.sum(axis=1) != CDF_TOTAL).any():
        raise ContractError("cdf quantization failed to reach the 16-bit total")
    return base


def _rows_to_table(masses: np.ndarray, valid: np.ndarray, sym_lo: np.ndarray,
                   escape: bool) -> CdfTable:
    widths = valid.sum(axis=1)
    row_starts = np.zeros(len(widths) + 1, dtype=np.int64)
    np.cumsum(widths + 1, out=row_starts[1:])
    cdf = np.zeros(int(row_starts[-1]), dtype=np.int64)
    csum = np.cumsum(masses, axis=1)
    for i in range(len(widths)):
        w = int(widths[i])
        cdf[row_starts[i] + 1:row_starts[i + 1]] = csum[i, :w]
    return CdfTable(cdf=cdf.astype(np.int64), row_starts=row_starts,
                    sym_lo=sym_lo.astype(np.int64), escape=escape)


def build_gaussian_tables(mu: np.ndarray, sigma: np.ndarray) -> CdfTable:
    """Per-element CDF rows for a mean-scale Gaussian, escape bin last.

    Ranges derive from (mu, sigma) only, so encoder and decoder construct
    identical tables from the transmitted hyper-latent.
    """
    mu = np.asarray(mu, dtype=np.float64).ravel()
    sigma = np.asarray(sigma, dtype=np.float64).ravel()
    if (sigma <= 0).any():
        raise ContractError("sigma must be positive")
    sig_r = np.minimum(sigma, _RANGE_SIGMA_CAP)
    lo = np.floor(mu - TAIL_T * sig_r).astype(np.int64)
    hi = np.ceil(mu + TAIL_T * sig_r).astype(np.int64)
    hi = np.maximum(hi, lo)
    widths = hi - lo + 1
    wmax = int(widths.max())
    k = lo[:, None] + np.arange(wmax)[None, :]
    valid = k <= hi[:, None]
    up = special.ndtr((k + 0.5 - mu[:, None]) / sigma[:, None])
    dn = special.ndtr((k - 0.5 - mu[:, None]) / sigma[:, None])
    p = np.where(valid, up - dn, 0.0)
    probs, valid_e = _append_escape(p, valid, widths)
    masses = _quantize_rows(probs, valid_e)
    return _rows_to_table(masses, valid_e, lo, escape=True)


def _append_escape(p: np.ndarray, valid: np.ndarray, widths: np.ndarray):
    """Add the escape bin directly after each row's last in-range symbol."""
    e = len(p)
    esc = np.maximum(1.0 - p.sum(axis=1), 1e-12)
    probs = np.concatenate([p, np.zeros((e, 1))], axis=1)
    valid_e = np.concatenate([valid, np.zeros((e, 1), dtype=bool)], axis=1)
    probs[np.arange(e), widths] = esc
    valid_e[np.arange(e), widths] = True
    return probs, valid_e


def build_prior_tables(prior: FactorizedPrior) -> CdfTable:
    """One CDF row per hyper-latent channel from the factorized prior."""
    lo, hi = prior.symbol_range()
    widths = hi - lo + 1
    wmax = int(widths.max())
    k = lo[:, None] + np.arange(wmax)[None, :].astype(np.float64)
    valid = k <= hi[:, None]
    up = prior.cdf_numpy(k + 0.5)
    dn = prior.cdf_numpy(k - 0.5)
    p = np.where(valid, up - dn, 0.0)
    probs, valid_e = _append_escape(p, valid, widths)
    masses = _quantize_rows(probs, valid_e)
    return _rows_to_table(masses, valid_e, lo, escape=True)
