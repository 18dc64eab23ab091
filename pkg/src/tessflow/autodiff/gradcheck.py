"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad

__all__ = ["numerical_grad", "analytic_grad", "grad_rel_error", "check_grad"]


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int,
                   eps: float = 1e-5) -> np.ndarray:
    """d fn / d inputs[index] by central differences (fn must return a scalar)."""
    x = inputs[index]
    base = x.data
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)
    with no_grad():
        for i in range(base.size):
            pert = base.copy().reshape(-1)
            pert[i] += eps
            x.data = pert.reshape(base.shape)
            fp = float(fn(*inputs).data)
            pert[i] -= 2 * eps
            x.data = pert.reshape(base.shape)
            fm = float(fn(*inputs).data)
            flat[i] = (fp - fm) / (2 * eps)
    x.data = base
    return grad


def analytic_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor]) -> list:
    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    backward(out)
    return [None if t.grad is None else t.grad.copy() for t in inputs]


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max|analytic - numeric| / (max|numeric| + 1e-12)."""
    analytic = np.zeros_like(numeric) if analytic is None else analytic
    return float(np.max(np.abs(analytic - numeric)) / (np.max(np.abs(numeric)) + 1e-12))


def check_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Worst relative error over all inputs that require grad."""
    ana = analytic_grad(fn, inputs)
    worst = 0.0
    for i, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        num = numerical_grad(fn, inputs, i, eps)
        worst = max(worst, grad_rel_error(ana[i], num))
    return worst
