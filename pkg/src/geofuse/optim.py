"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError


class AdamState:
    """First/second moments per parameter, a shared step counter, and hyperparameters.

    ``step`` updates trainable parameters only and zeroes every gradient
    buffer afterward, so each optimizer step consumes exactly the gradients
    accumulated since the previous one.
    """

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        if lr <= 0.0:
            raise ConfigError(f"Adam learning rate must be positive, got {lr}")
        b1, b2 = betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {betas}")
        self.params = list(params)
        self.lr = float(lr)
        self.betas = (float(b1), float(b2))
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.trainable:
                m *= b1
                m += (1.0 - b1) * p.grad
                v *= b2
                v += (1.0 - b2) * p.grad * p.grad
                p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad[...] = 0.0


def clip_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale trainable gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.trainable:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        factor = max_norm / norm
        for p in params:
            if p.trainable:
                p.grad *= factor
    return norm
