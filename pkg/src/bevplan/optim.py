"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def cosine_lr(base_lr: float, step: int, horizon: int) -> float:
    """base * 0.5 * (1 + cos(pi * step / horizon)); base at 0, zero at horizon."""
    if horizon <= 0:
        return base_lr
    frac = min(max(step / horizon, 0.0), 1.0)
    return base_lr * 0.5 * (1.0 + float(np.cos(np.pi * frac)))


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict.

    Moments are kept per parameter name; ``step_count`` drives both the
    bias correction and the cosine schedule.
    """

    base_lr: float
    horizon: int
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        return cosine_lr(self.base_lr, self.step_count, self.horizon)

    def step(self, params: dict[str, Tensor]):
        """Apply one update using each parameter's accumulated .grad.

        Parameters without a gradient are skipped.  Iteration follows
        sorted names so results do not depend on dict construction
        order.
        """
        lr = self.current_lr()
        t = self.step_count + 1
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {p.grad.shape} does not match parameter "
                    f"{name} shape {p.data.shape}"
                )
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v = self.beta2 * v + (1.0 - self.beta2) * p.grad**2
            self.m[name] = m
            self.v[name] = v
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * p.data)
        self.step_count += 1

    def zero_grad(self, params: dict[str, Tensor]):
        for p in params.values():
            p.grad = None
