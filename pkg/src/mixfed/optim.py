"""Adam and SGD parameter updates.

An optimizer owns a list of leaf tensors. ``step()`` applies one update
from the populated gradients and clears them afterwards, so each step must
be preceded by a fresh backward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import MissingGrad
from .tensor import Tensor


class SGD:
    kind = "sgd"

    def __init__(self, params, lr: float):
        self.params: list[Tensor] = list(params)
        self.lr = float(lr)
        self.step_count = 0

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGrad("sgd step with an unpopulated gradient")
        self.step_count += 1
        for p in self.params:
            p.data -= self.lr * p.grad
            p.grad = None


class Adam:
    """Adam with bias correction; betas (0.9, 0.999), epsilon 1e-8."""

    kind = "adam"

    def __init__(self, params, lr: float = 0.0004, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise MissingGrad("adam step with an unpopulated gradient")
            if not np.isfinite(p.grad).all():
                raise MissingGrad("adam step with a non-finite gradient")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None


def make_optimizer(kind: str, params, lr: float):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")
