"""Differentiable op catalog: elementwise, contraction, shape and reduction ops.

All ops take :class:`Tensor` operands (plain numbers and arrays are wrapped as
constants) and return a new tensor. Shape violations raise :class:`ShapeError`
naming the op; non-finite results raise :class:`NumericalError`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from msct.errors import ConfigError, ShapeError
from msct.tensor.tensor import Tensor

LAYER_NORM_EPS = 1e-5
MASK_FILL = -1e30


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape, detail="not broadcastable") from None


# --- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("multiply", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward, "multiply")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("divide", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor.from_op(out, (a, b), backward, "divide")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def pow_scalar(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data**exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return Tensor.from_op(out, (a,), backward, "pow")


def square(a) -> Tensor:
    return mul(a, a)


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    """Natural log; non-positive input is a numerical error."""
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g / a.data,), "log")


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, floor)
    return Tensor.from_op(out, (a,), lambda g: (g * (a.data > floor),), "clamp_min")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor.from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return Tensor.from_op(out, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0.0
    out = np.where(positive, a.data, alpha * np.expm1(np.minimum(a.data, 0.0)))

    def backward(g):
        return (g * np.where(positive, 1.0, out + alpha),)

    return Tensor.from_op(out, (a,), backward, "elu")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), backward, "softmax")


def where(mask: np.ndarray, a, fill: float = MASK_FILL) -> Tensor:
    """Keep ``a`` where ``mask`` is true, ``fill`` elsewhere (masked softmax inputs)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, a.data, fill)
    except ValueError:
        raise ShapeError("where", mask.shape, a.shape) from None

    def backward(g):
        return (_unbroadcast(g * mask, a.shape),)

    return Tensor.from_op(out, (a,), backward, "where")


def gradient_reversal(a, scale: float) -> Tensor:
    """Identity forward; the backward pass multiplies gradients by ``-scale``."""
    a = as_tensor(a)
    return Tensor.from_op(a.data.copy(), (a,), lambda g: (-scale * g,), "gradient_reversal")


# --- contraction and affine maps -------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape, detail="inner dimensions differ")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims differ") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(out, (a, b), backward, "matmul")


def linear(x, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W + b`` over the last axis."""
    x = as_tensor(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError("Linear", x.shape, weight.shape, detail="input width")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# --- shape ops -------------------------------------------------------------


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ShapeError("concat", tensors[0].shape, t.shape, detail=f"axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor.from_op(out, tensors, backward, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError("stack", tensors[0].shape, t.shape)
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, backward, "stack")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index])

    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)

    def backward(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return Tensor.from_op(out, (a,), backward, "getitem")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return Tensor.from_op(out.copy(), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor.from_op(out, (a,), lambda g: (g.transpose(inverse),), "transpose")


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, axes)


# --- reductions and layer statistics ---------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(sorted(ax % len(shape) for ax in axes))
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.array(np.broadcast_to(g, shape))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)

    def backward(g):
        return (_expand_reduced(g, a.shape, axis, keepdims),)

    return Tensor.from_op(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[ax] for ax in np.atleast_1d(axis)]))
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def var(a, axis: int = -1, keepdims: bool = True) -> Tensor:
    """Population variance along ``axis``."""
    centred = sub(a, mean(a, axis=axis, keepdims=True))
    return mean(mul(centred, centred), axis=axis, keepdims=keepdims)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x = as_tensor(x)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape, detail="gain/bias width")
    centred = sub(x, mean(x, axis=-1, keepdims=True))
    variance = mean(mul(centred, centred), axis=-1, keepdims=True)
    normalised = mul(centred, pow_scalar(add(variance, eps), -0.5))
    return add(mul(normalised, gain), bias)


# --- dropout ---------------------------------------------------------------


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ConfigError("dropout", f"rate must lie in [0, 1), got {rate}")


def _as_rng(mask_seed) -> np.random.Generator:
    if isinstance(mask_seed, np.random.Generator):
        return mask_seed
    return np.random.default_rng(mask_seed)


def sample_variational_mask(shape, rate: float, mask_seed) -> np.ndarray:
    """Inverted-dropout mask: kept entries carry ``1 / (1 - rate)``."""
    _check_rate(rate)
    rng = _as_rng(mask_seed)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def variational_dropout(
    x, rate: float, training: bool, mask_seed=None, time_axis: int = -2
) -> Tensor:
    """Dropout whose mask is drawn once per sequence and feature.

    The mask has size one along ``time_axis`` so every time step of a unit
    sees the same dropped features. Eval mode and ``rate == 0`` are identity.
    """
    _check_rate(rate)
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    shape = list(x.shape)
    if x.ndim >= 2:
        shape[time_axis] = 1
    mask = sample_variational_mask(tuple(shape), rate, mask_seed)
    return mul(x, Tensor(mask))
