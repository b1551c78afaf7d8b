"""Adam optimizer over named parameter collections.

The optimizer is the single writer of parameter data. A step with any
non-finite gradient is rejected before any state mutates, so a bad batch
cannot corrupt moment estimates.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError
from .tensor import Tensor


class Adam:
    """Adam with bias correction (epsilon added outside the square root)."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        """Apply one update; parameters without a gradient are skipped."""
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step_count": self.step_count,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.beta1 = float(state["beta1"])
        self.beta2 = float(state["beta2"])
        self.eps = float(state["eps"])
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.array(state["m"][k], dtype=self.params[k].data.dtype)
            self.v[k] = np.array(state["v"][k], dtype=self.params[k].data.dtype)


def lr_at(step: int, total_steps: int, base_lr: float = 1e-4) -> float:
    """Piecewise-constant schedule: base, then /10 at 75%, /100 at ~92%."""
    if total_steps <= 0:
        return base_lr
    frac = step / total_steps
    if frac >= 0.917:
        return base_lr * 0.01
    if frac >= 0.75:
        return base_lr * 0.1
    return base_lr
