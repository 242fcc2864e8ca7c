"""In-place parameter updates: momentum SGD with polynomial decay, and Adam."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def poly_lr(base: float, it: int, max_iter: int, power: float = 0.9) -> float:
    if max_iter <= 0:
        return base
    return base * (1.0 - min(it, max_iter) / max_iter) ** power


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        for p, g, v in zip(self.params, grads, self.velocity):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v


class Adam:
    """Moment estimates are kept as one flat vector across all parameters."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.99), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.sizes = [p.data.size for p in self.params]
        total = sum(self.sizes)
        self.m = np.zeros(total)
        self.v = np.zeros(total)

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        g = np.concatenate([np.ravel(x) for x in grads]) if grads else np.zeros(0)
        self.m *= self.b1
        self.m += (1.0 - self.b1) * g
        g *= g
        self.v *= self.b2
        self.v += (1.0 - self.b2) * g
        denom = np.sqrt(self.v * (1.0 / c2))
        denom += self.eps
        upd = np.divide(self.m, denom, out=denom)
        upd *= lr / c1
        offset = 0
        for p, n in zip(self.params, self.sizes):
            p.data -= upd[offset:offset + n].reshape(p.data.shape)
            offset += n
