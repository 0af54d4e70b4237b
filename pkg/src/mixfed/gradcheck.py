"""Central finite-difference gradient verification.

The checker only ever evaluates forward passes, so it is independent of the
backward implementation it is used to validate.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward


def numeric_gradient(loss_fn, leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """d loss / d leaf via central differences, perturbing entries in place."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn().item()
        flat[i] = orig - h
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(loss_fn, leaves, h: float = 1e-5) -> float:
    """Worst relative disagreement between analytic and numeric gradients.

    ``loss_fn`` must rebuild the forward pass from the given leaf tensors on
    every call and return a scalar Tensor.
    """
    for leaf in leaves:
        leaf.grad = None
    backward(loss_fn())
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        numeric = numeric_gradient(loss_fn, leaf, h=h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        rel = np.abs(analytic - numeric) / denom
        worst = max(worst, float(rel.max()))
        leaf.grad = None
    return worst
