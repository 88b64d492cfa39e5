from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class Adam:
    """Adam with bias correction and decoupled weight decay.

    Decay follows the AdamW convention: ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)``.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, weight_decay: float = 5e-5,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState(0, [np.zeros_like(p.data) for p in self.params],
                               [np.zeros_like(p.data) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        st = self.state
        st.step += 1
        c1 = 1.0 - self.beta1 ** st.step
        c2 = 1.0 - self.beta2 ** st.step
        for p, m, v in zip(self.params, st.m, st.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def adam_step(params: Sequence[Tensor], optimizer: Adam) -> None:
    """Apply one update from the gradients already on ``params``."""
    if [id(p) for p in params] != [id(p) for p in optimizer.params]:
        raise ValueError("optimizer was built for a different parameter list")
    optimizer.step()
