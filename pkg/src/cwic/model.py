"""Codec model: transform stacks, hyperprior, quantization, RD objective.

The network maps an image x to a latent grid y (stride-16 overall), codes y
against a conditional Gaussian whose mean and scale come from a second,
smaller latent z, and reconstructs through mirrored synthesis transforms.
Window attention and the feature coding stage are optional so ablations can
switch them off without touching the rest of the graph.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import entropy, metrics
from . import tensor as tt
from .cwam import Cwam
from .errors import ConfigError, DimensionError
from .layers import Conv2d, ConvTranspose2d, FeatureCoder, Gdn, Module, ResidualBlock
from .tensor import Tensor

# Rate-distortion tradeoff grids, indexed by quality 1..len(grid).
LAMBDA_GRID_MSE = (0.0045, 0.00975, 0.0175, 0.0483, 0.09, 0.14)
LAMBDA_GRID_MSSSIM = (8.73, 31.73, 60.50)

METRICS = ("mse", "msssim")
QUANT_MODES = ("noise", "round", "ste")

# Distortion for the MSE objective is measured on a 255-valued scale so the
# lambda grid above lands in a usable range against bits per pixel.
_MSE_SCALE = 255.0 ** 2

_MIN_LATENT = 4


def lambda_grid(metric: str):
    if metric == "mse":
        return LAMBDA_GRID_MSE
    if metric == "msssim":
        return LAMBDA_GRID_MSSSIM
    raise ConfigError(f"unknown metric {metric!r}")


def lambda_for_quality(quality: int, metric: str) -> float:
    grid = lambda_grid(metric)
    if not 1 <= quality <= len(grid):
        raise ConfigError(
            f"quality for {metric} must be in 1..{len(grid)}, got {quality}")
    return grid[quality - 1]


def quality_index(lam: float, metric: str) -> int | None:
    """Grid position of a lambda value, or None for a custom setting."""
    grid = lambda_grid(metric)
    for i, v in enumerate(grid):
        if math.isclose(lam, v, rel_tol=1e-9):
            return i + 1
    return None


@dataclass
class ModelConfig:
    """Architecture and objective settings; None for m/hyper derives them."""

    n: int = 64
    m: int | None = None
    hyper: int | None = None
    window: int = 4
    heads: int = 4
    lam: float = LAMBDA_GRID_MSE[3]
    metric: str = "mse"
    seed: int = 0
    use_cwam: bool = True
    use_feature: bool = True

    def __post_init__(self):
        if self.m is None:
            self.m = self.n
        if self.hyper is None:
            self.hyper = max(self.m // 2, 1)
        for name in ("n", "m", "hyper", "window", "heads", "seed"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
            setattr(self, name, int(v))
        if min(self.n, self.m, self.hyper, self.heads) < 1:
            raise ConfigError("channel and head counts must be positive")
        if self.m % 2:
            raise ConfigError("m must be even (hyper decoder widens to 3m/2)")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window must be even and >= 2, got {self.window}")
        if self.use_cwam and (self.n % self.heads or self.m % self.heads):
            raise ConfigError("n and m must be divisible by heads")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            raise ConfigError(f"lam must be positive, got {self.lam!r}")
        self.lam = float(self.lam)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(raw) - known
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        return cls(**raw)

    def hash_bytes(self) -> bytes:
        return hashlib.sha256(self.to_json().encode("utf8")).digest()[:8]

    def hash_hex(self) -> str:
        return self.hash_bytes().hex()


def _content_noise(arr: np.ndarray, seed: int, domain: str) -> np.ndarray:
    """U(-0.5, 0.5) noise keyed by (seed, domain, row content).

    Hashing each batch row's bytes into a Philox key makes training noise a
    pure function of the inputs, so reruns are bit-identical without any
    global generator state.
    """
    base = domain.encode("utf8") + int(seed).to_bytes(8, "big", signed=True)
    out = np.empty_like(arr)
    for i in range(arr.shape[0]):
        digest = hashlib.sha256(base + np.ascontiguousarray(arr[i]).tobytes()).digest()
        g = np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "big")))
        out[i] = g.uniform(-0.5, 0.5, arr.shape[1:])
    return out


def quantize(v: Tensor, mode: str, seed: int = 0, domain: str = "y") -> Tensor:
    """Quantizer surrogate: additive noise, hard round, or straight-through."""
    if mode == "noise":
        return v + Tensor(_content_noise(v.data, seed, domain))
    if mode == "round":
        return tt.round_(v)
    if mode == "ste":
        return tt.round_ste(v)
    raise ConfigError(f"quantize mode must be one of {QUANT_MODES}, got {mode!r}")


@dataclass
class ForwardState:
    """Intermediate tensors from one codec pass, kept for diagnostics."""

    y: Tensor
    y_hat: Tensor
    z: Tensor
    z_hat: Tensor
    mu: Tensor
    sigma: Tensor
    y_dec: Tensor
    x_syn: Tensor
    x_hat: Tensor
    mode: str = "noise"

    def deviation_maps(self):
        """Residual corrections applied on the decoder side.

        Returns (latent correction y_dec - y_hat, feature correction
        x_hat - x_syn) as numpy arrays.
        """
        return (self.y_dec.data - self.y_hat.data,
                self.x_hat.data - self.x_syn.data)


@dataclass
class LossBreakdown:
    loss: Tensor  # differentiable scalar, backward() target
    total: float  # == rate_bpp + lam * distortion, exactly
    rate_bpp: float
    distortion: float
    lam: float
    bits_y: float
    bits_z: float
    rate_rows: np.ndarray  # per-image bpp
    dist_rows: np.ndarray  # per-image distortion


class CodecModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        n, m, ch = cfg.n, cfg.m, cfg.hyper

        def att(channels):
            return Cwam(channels, cfg.window, cfg.heads, rng=rng) if cfg.use_cwam else None

        if cfg.use_feature:
            self.fe = FeatureCoder(rng=rng)
            self.fd = FeatureCoder(rng=rng)
        else:
            self.fe = None
            self.fd = None

        # Analysis: four stride-2 convolutions with GDN between, attention
        # after the second and fourth stages.
        self.a_conv1 = Conv2d(3, n, 5, stride=2, pad=2, rng=rng)
        self.a_gdn1 = Gdn(n, rng=rng)
        self.a_conv2 = Conv2d(n, n, 5, stride=2, pad=2, rng=rng)
        self.a_gdn2 = Gdn(n, rng=rng)
        self.a_att1 = att(n)
        self.a_conv3 = Conv2d(n, n, 5, stride=2, pad=2, rng=rng)
        self.a_gdn3 = Gdn(n, rng=rng)
        self.a_conv4 = Conv2d(n, m, 5, stride=2, pad=2, rng=rng)
        self.a_att2 = att(m)

        # Residual refinement on the encoder latent, attention at stack end.
        self.enc_res = [ResidualBlock(m, rng=rng), ResidualBlock(m, rng=rng)]
        self.enc_att = att(m)

        self.h_conv1 = Conv2d(m, ch, 3, stride=1, pad=1, rng=rng)
        self.h_conv2 = Conv2d(ch, ch, 5, stride=2, pad=2, rng=rng)
        self.h_conv3 = Conv2d(ch, ch, 5, stride=2, pad=2, rng=rng)

        self.hs_deconv1 = ConvTranspose2d(ch, m, 5, stride=2, pad=2,
                                          output_padding=1, rng=rng)
        self.hs_deconv2 = ConvTranspose2d(m, m * 3 // 2, 5, stride=2, pad=2,
                                          output_padding=1, rng=rng)
        self.hs_conv3 = Conv2d(m * 3 // 2, 2 * m, 3, stride=1, pad=1, rng=rng)

        # Decoder-side refinement of the quantized latent before synthesis.
        self.dec_res = [ResidualBlock(m, rng=rng), ResidualBlock(m, rng=rng)]
        self.dec_att = att(m)

        self.s_att1 = att(m)
        self.s_deconv1 = ConvTranspose2d(m, n, 5, stride=2, pad=2,
                                         output_padding=1, rng=rng)
        self.s_igdn1 = Gdn(n, inverse=True, rng=rng)
        self.s_deconv2 = ConvTranspose2d(n, n, 5, stride=2, pad=2,
                                         output_padding=1, rng=rng)
        self.s_igdn2 = Gdn(n, inverse=True, rng=rng)
        self.s_att2 = att(n)
        self.s_deconv3 = ConvTranspose2d(n, n, 5, stride=2, pad=2,
                                         output_padding=1, rng=rng)
        self.s_igdn3 = Gdn(n, inverse=True, rng=rng)
        self.s_deconv4 = ConvTranspose2d(n, 3, 5, stride=2, pad=2,
                                         output_padding=1, rng=rng)

        self.prior = entropy.FactorizedPrior(ch, rng=rng)

    # -- encoder side -----------------------------------------------------

    def encode_latent(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"expected Nx3xHxW input, got {x.shape}")
        if x.shape[2] % 16 or x.shape[3] % 16:
            raise DimensionError(
                f"spatial dims must be multiples of 16, got {x.shape[2]}x{x.shape[3]}")
        t = self.fe(x) if self.fe is not None else x
        t = self.a_gdn1(self.a_conv1(t))
        t = self.a_gdn2(self.a_conv2(t))
        if self.a_att1 is not None:
            t = self.a_att1(t)
        t = self.a_gdn3(self.a_conv3(t))
        t = self.a_conv4(t)
        if self.a_att2 is not None:
            t = self.a_att2(t)
        for blk in self.enc_res:
            t = blk(t)
        if self.enc_att is not None:
            t = self.enc_att(t)
        return t

    def hyper_encode(self, y: Tensor) -> Tensor:
        h, w = y.shape[2], y.shape[3]
        if h < _MIN_LATENT or w < _MIN_LATENT:
            raise ConfigError(
                f"latent grid {h}x{w} below the {_MIN_LATENT}x{_MIN_LATENT} minimum; "
                "input images must be at least 64x64")
        if h % _MIN_LATENT or w % _MIN_LATENT:
            raise ConfigError(
                f"latent grid {h}x{w} must be a multiple of {_MIN_LATENT} "
                "(pad images to a multiple of 64)")
        t = tt.abs_(y)
        t = tt.leaky_relu(self.h_conv1(t))
        t = tt.leaky_relu(self.h_conv2(t))
        return self.h_conv3(t)

    def hyper_decode(self, z_hat: Tensor):
        t = tt.leaky_relu(self.hs_deconv1(z_hat))
        t = tt.leaky_relu(self.hs_deconv2(t))
        t = self.hs_conv3(t)
        m = self.cfg.m
        mu = t[:, :m]
        sigma = tt.clamp_min(tt.exp(t[:, m:]), entropy.SIGMA_MIN)
        return mu, sigma

    # -- decoder side -----------------------------------------------------

    def decode_latent(self, y_hat: Tensor) -> Tensor:
        t = y_hat
        for blk in self.dec_res:
            t = blk(t)
        if self.dec_att is not None:
            t = self.dec_att(t)
        return t

    def synthesis(self, y_dec: Tensor) -> Tensor:
        t = y_dec
        if self.s_att1 is not None:
            t = self.s_att1(t)
        t = self.s_igdn1(self.s_deconv1(t))
        t = self.s_igdn2(self.s_deconv2(t))
        if self.s_att2 is not None:
            t = self.s_att2(t)
        t = self.s_igdn3(self.s_deconv3(t))
        return self.s_deconv4(t)

    def reconstruct(self, y_hat: Tensor):
        """Quantized latent to image-domain output (unclamped)."""
        y_dec = self.decode_latent(y_hat)
        x_syn = self.synthesis(y_dec)
        x_hat = self.fd(x_syn) if self.fd is not None else x_syn
        return x_hat, y_dec, x_syn

    # -- objective --------------------------------------------------------

    def forward(self, x: Tensor, mode: str = "noise") -> ForwardState:
        y = self.encode_latent(x)
        z = self.hyper_encode(y)
        y_hat = quantize(y, mode, self.cfg.seed, "y")
        z_hat = quantize(z, mode, self.cfg.seed, "z")
        mu, sigma = self.hyper_decode(z_hat)
        x_hat, y_dec, x_syn = self.reconstruct(y_hat)
        return ForwardState(y=y, y_hat=y_hat, z=z, z_hat=z_hat, mu=mu,
                            sigma=sigma, y_dec=y_dec, x_syn=x_syn, x_hat=x_hat,
                            mode=mode)

    def loss(self, x: Tensor, state: ForwardState) -> LossBreakdown:
        """Rate-distortion objective: loss = bpp + lam * distortion."""
        n, _, h, w = x.shape
        npix_row = h * w
        p_y = entropy.gaussian_likelihood(state.y_hat, state.mu, state.sigma)
        p_z = self.prior.likelihood(state.z_hat)
        inv_ln2 = -1.0 / math.log(2.0)
        bits_y_rows = tt.sum_(tt.log(p_y), axis=(1, 2, 3)) * inv_ln2
        bits_z_rows = tt.sum_(tt.log(p_z), axis=(1, 2, 3)) * inv_ln2
        rate = (bits_y_rows.sum() + bits_z_rows.sum()) * (1.0 / (n * npix_row))

        if self.cfg.metric == "mse":
            dist = metrics.mse(x, state.x_hat) * _MSE_SCALE
            diff = x.data.astype(np.float64) - state.x_hat.data.astype(np.float64)
            dist_rows = (diff ** 2).mean(axis=(1, 2, 3)) * _MSE_SCALE
        else:
            dist = 1.0 - metrics.ms_ssim(x, state.x_hat)
            with tt.no_grad():
                dist_rows = np.array([
                    1.0 - metrics.ms_ssim(Tensor(x.data[i:i + 1]),
                                          Tensor(state.x_hat.data[i:i + 1])).item()
                    for i in range(n)])
        loss = rate + dist * self.cfg.lam

        rate_f = float(rate.item())
        dist_f = float(dist.item())
        return LossBreakdown(
            loss=loss,
            total=rate_f + self.cfg.lam * dist_f,
            rate_bpp=rate_f,
            distortion=dist_f,
            lam=self.cfg.lam,
            bits_y=float(bits_y_rows.data.sum()),
            bits_z=float(bits_z_rows.data.sum()),
            rate_rows=bits_y_rows.data.astype(np.float64) / npix_row
            + bits_z_rows.data.astype(np.float64) / npix_row,
            dist_rows=np.asarray(dist_rows, dtype=np.float64),
        )

    def forward_train(self, x: Tensor, mode: str = "noise"):
        state = self.forward(x, mode)
        return state, self.loss(x, state)
