from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from ..errors import NonFiniteError
from .core import Tensor


class Adam:
    """Adam with optional L2 weight decay folded into the gradient (``g + λ·θ``).

    ``step`` refuses to touch any parameter when a gradient is NaN or infinite.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Optional[list[np.ndarray]] = None) -> None:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name or '?'}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.weight_decay > 0:
                g = g + self.weight_decay * p.values
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, grads, state: Optional[Adam] = None, lr: float = 1e-3, beta1=0.9,
              beta2=0.999, eps=1e-8, weight_decay: float = 0.0) -> Adam:
    """Functional wrapper: apply one Adam update and return the (possibly new) state."""
    if state is None:
        state = Adam(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    state.step(list(grads))
    return state
