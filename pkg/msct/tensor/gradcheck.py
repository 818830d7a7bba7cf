"""Central finite-difference checks against :func:`backward`."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from msct.tensor.tensor import Tensor, backward, zero_grad

FD_STEP = 1e-5
FD_RTOL = 1e-4


def numerical_gradient(
    fn: Callable[[], Tensor], param: Tensor, step: float = FD_STEP
) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = FD_STEP,
    rtol: float = FD_RTOL,
    atol: float = 1e-7,
) -> bool:
    """True when analytic and numerical gradients agree for every parameter.

    Agreement is ``|a - n| <= atol + rtol * max(|a|, |n|)`` elementwise.
    """
    zero_grad(params)
    analytic = backward(fn(), params)
    zero_grad(params)
    for p, a in zip(params, analytic):
        n = numerical_gradient(fn, p, step)
        scale = np.maximum(np.abs(a), np.abs(n))
        if not np.all(np.abs(a - n) <= atol + rtol * scale):
            return False
    return True


def max_relative_error(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> float:
    zero_grad(params)
    analytic = backward(fn(), params)
    zero_grad(params)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = numerical_gradient(fn, p)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
