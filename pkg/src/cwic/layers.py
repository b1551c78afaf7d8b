"""Network layer vocabulary: convolutions, GDN/IGDN, dense and residual blocks.

Layers are plain containers of parameter tensors plus a ``__call__`` that
builds the autodiff graph. Parameter discovery walks attributes in
construction order, so checkpoint layouts are stable for a given config.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tt
from .errors import DimensionError
from .tensor import Tensor


class Module:
    """Base container; collects parameters from attributes recursively."""

    def named_params(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_params(prefix=f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(prefix=f"{key}.{i}.")

    def params(self) -> dict:
        return dict(self.named_params())

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())


def _he_weight(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    # Uniform fan-in scaling; the gentler bound keeps the multiplicative
    # IGDN stages from blowing up activations before training starts.
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(np.float32),
                  requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 pad: int = 0, pad_mode: str = "zero", bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.pad = pad
        self.pad_mode = pad_mode
        self.weight = _he_weight(rng, (cout, cin, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return tt.conv2d(x, self.weight, self.bias, stride=self.stride,
                         pad=self.pad, pad_mode=self.pad_mode)


class ConvTranspose2d(Module):
    def __init__(self, cin: int, cout: int, k: int, stride: int = 1,
                 pad: int = 0, output_padding: int = 0, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.pad = pad
        self.output_padding = output_padding
        self.weight = _he_weight(rng, (cin, cout, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return tt.conv2d_transpose(x, self.weight, self.bias, stride=self.stride,
                                   pad=self.pad, output_padding=self.output_padding)


class Gdn(Module):
    """Divisive normalization: y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2).

    ``inverse=True`` multiplies instead of dividing. beta and gamma are
    stored through a squared reparameterization (beta = beta_raw^2 + 1e-6,
    gamma = gamma_raw^2) so Adam can run unconstrained while positivity
    holds by construction.
    """

    BETA_MIN = 1e-6

    def __init__(self, channels: int, inverse: bool = False,
                 rng: np.random.Generator | None = None):
        self.channels = channels
        self.inverse = inverse
        self.beta_raw = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        gamma_init = 0.1 * np.eye(channels) + 1e-6
        self.gamma_raw = Tensor(np.sqrt(gamma_init).astype(np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise DimensionError(
                f"gdn expects N x {self.channels} x H x W, got {x.shape}")
        beta = self.beta_raw * self.beta_raw + self.BETA_MIN
        gamma = self.gamma_raw * self.gamma_raw
        c = self.channels
        kernel = gamma.reshape(c, c, 1, 1)
        norm = tt.sqrt(tt.conv2d(x * x, kernel, beta))
        if self.inverse:
            return x * norm
        return x / norm


class DenseBlock(Module):
    """Three cascade convolutions (kernel 1, 3, 1) with dense connectivity.

    Stage i consumes the concatenation of the input with all previous stage
    outputs; a final 1x1 projection returns to the input channel count. The
    residual add, where wanted, is the caller's.
    """

    def __init__(self, channels: int, growth: int | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        g = growth if growth is not None else (channels + 1) // 2
        self.growth = g
        self.conv1 = Conv2d(channels, g, 1, rng=rng)
        self.conv2 = Conv2d(channels + g, g, 3, pad=1, rng=rng)
        self.conv3 = Conv2d(channels + 2 * g, g, 1, rng=rng)
        self.proj = Conv2d(channels + 3 * g, channels, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise DimensionError(
                f"dense block expects {self.channels} channels, got {x.shape}")
        f1 = tt.leaky_relu(self.conv1(x))
        c1 = tt.concat([x, f1], axis=1)
        f2 = tt.leaky_relu(self.conv2(c1))
        c2 = tt.concat([c1, f2], axis=1)
        f3 = tt.leaky_relu(self.conv3(c2))
        c3 = tt.concat([c2, f3], axis=1)
        return self.proj(c3)


class ResidualBlock(Module):
    """Bottleneck residual unit: x + (1x1 -> 3x3 -> 1x1) cascade."""

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        mid = max(channels // 2, 1)
        self.conv1 = Conv2d(channels, mid, 1, rng=rng)
        self.conv2 = Conv2d(mid, mid, 3, pad=1, rng=rng)
        self.conv3 = Conv2d(mid, channels, 1, rng=rng)

    def branch(self, x: Tensor) -> Tensor:
        h = tt.leaky_relu(self.conv1(x))
        h = tt.leaky_relu(self.conv2(h))
        return self.conv3(h)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.branch(x)


class FeatureCoder(Module):
    """Residual dense stage at image resolution (3 channels in and out).

    Used before the encoder to emphasize hard regions and after the decoder
    to refine the reconstruction; both directions share this structure with
    independent parameters.
    """

    def __init__(self, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.proj = Conv2d(3, 3, 3, pad=1, rng=rng)
        self.dense = DenseBlock(3, growth=2, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        p = self.proj(x)
        return p + self.dense(p)
