"""First-order optimizers over lists of Parameters."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import Parameter


class Adam:
    """Bias-corrected first/second moment update. Clears gradients after each step."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.zero_grad()


class SGD:
    """Plain or heavy-ball momentum descent."""

    def __init__(self, params: Sequence[Parameter], lr: float = 1e-2, momentum: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.t = 0
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for p, vel in zip(self.params, self.velocity):
            vel *= self.momentum
            vel += p.grad
            p.data -= self.lr * vel
            p.zero_grad()
