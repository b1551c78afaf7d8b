"""Shared test utilities: finite-difference gradient oracles."""

import numpy as np

from cwic import tensor as tt
from cwic.tensor import Tensor


def rel_err(analytic: float, numeric: float) -> float:
    d = abs(analytic - numeric)
    m = max(abs(analytic), abs(numeric))
    if m < 1e-6:
        # both effectively zero: only a real discrepancy counts
        return 0.0 if d < 1e-8 else d
    return d / m


def fd_max_rel_err(fn, tensors, n_coords=5, h=1e-4, rng=None) -> float:
    """Max relative error of analytic grads vs central differences.

    fn(*tensors) must return a scalar Tensor. All tensors must be float64
    leaves with requires_grad=True; coordinates are sampled when a tensor
    has more elements than n_coords.

    A disagreeing coordinate is retried at h/10 and h/100: a wrong
    analytic gradient stays wrong at every step size, while a kink
    (leaky_relu, abs, clamp) within h of the base point stops being
    straddled once h shrinks below the distance to it.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        assert t.dtype == np.float64, "finite differences need 64-bit data"
        t.zero_grad()
    fn(*tensors).backward()
    worst = 0.0
    for t in tensors:
        if t.size <= n_coords:
            coords = list(np.ndindex(*t.shape))
        else:
            coords = [tuple(int(rng.integers(0, s)) for s in t.shape)
                      for _ in range(n_coords)]
        for idx in coords:
            base = float(t.data[idx])
            best = np.inf
            for h_try in (h, h / 10.0, h / 100.0):
                t.data[idx] = base + h_try
                with tt.no_grad():
                    fp = fn(*tensors).item()
                t.data[idx] = base - h_try
                with tt.no_grad():
                    fm = fn(*tensors).item()
                t.data[idx] = base
                numeric = (fp - fm) / (2.0 * h_try)
                best = min(best, rel_err(float(t.grad[idx]), numeric))
                if best < 1e-6:
                    break
            worst = max(worst, best)
    return worst


def leaf(rng, shape, scale=1.0, offset=0.0):
    return Tensor(rng.normal(offset, scale, shape), dtype=np.float64,
                  requires_grad=True)


def cast_params_f64(module):
    for _, p in module.named_params():
        p.data = p.data.astype(np.float64)
