"""Differentiable operations on :class:`Tensor`.

Elementwise binary ops follow numpy broadcasting; gradients are summed back
to each operand's shape.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .core import Tensor, as_tensor, make_result


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_result(
        a.values + b.values, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_result(
        a.values - b.values, (a, b), lambda g: (_sum_to(g, a.shape), _sum_to(-g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.values, b.values
    return make_result(
        av * bv, (a, b), lambda g: (_sum_to(g * bv, a.shape), _sum_to(g * av, b.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    av, bv = a.values, b.values
    out = av / bv
    return make_result(
        out, (a, b), lambda g: (_sum_to(g / bv, a.shape), _sum_to(-g * out / bv, b.shape))
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.values, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return make_result(av**exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return make_result(av * av, (a,), lambda g: (2.0 * g * av,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make_result(av @ bv, (a, b), backward)


def affine(x, weight, bias) -> Tensor:
    """``x @ weight + bias`` for x of shape (..., n_in), weight (n_in, n_out)."""
    return add(matmul(x, weight), bias)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return make_result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    av = a.values
    neg_part = alpha * np.expm1(np.minimum(av, 0.0))
    out = np.where(av > 0, av, neg_part)
    return make_result(out, (a,), lambda g: (g * np.where(av > 0, 1.0, neg_part + alpha),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.values
    return make_result(np.log(av), (a,), lambda g: (g / av,))


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    av = a.values
    m = np.max(av, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = np.exp(av - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + m
    weights = shifted / total

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * weights,)

    return make_result(out if keepdims else np.squeeze(out, axis=axis), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    av = a.values
    e = np.exp(av - av.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return make_result(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(a.values[idx], (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    cuts = np.cumsum(sizes)[:-1]
    return make_result(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def embedding_lookup(table, ids, padding_idx: int | None = 0) -> Tensor:
    """Rows of ``table`` selected by integer ``ids``; the padding row gets no gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError(f"embedding ids must be integers, got {ids.dtype}")
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"embedding id out of range [0, {n_rows}): min {ids.min()}, max {ids.max()}")

    def backward(g):
        full = np.zeros_like(table.values)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            full[padding_idx] = 0.0
        return (full,)

    return make_result(table.values[ids], (table,), backward)


def conv1d(x, kernels, bias=None, stride: int = 1, padding="same") -> Tensor:
    """1-D cross-correlation.

    x: (batch, in_channels, length); kernels: (out_channels, in_channels, width).
    ``padding="same"`` zero-pads (width - 1) / 2 on each side so the length is kept.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    if x.ndim != 3 or kernels.ndim != 3 or x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv1d: incompatible shapes {x.shape} and {kernels.shape}")
    n_out, n_in, width = kernels.shape
    if padding == "same":
        if width % 2 == 0:
            raise DimensionError(f"conv1d: same padding needs an odd kernel width, got {width}")
        pad = (width - 1) // 2
    else:
        pad = int(padding)
    batch, _, length = x.shape
    padded_len = length + 2 * pad
    if width > padded_len:
        raise DimensionError(f"conv1d: kernel width {width} exceeds padded input length {padded_len}")
    out_len = (padded_len - width) // stride + 1

    xp = np.pad(x.values, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2)[:, :, ::stride, :]
    # (batch, out_len, in_channels * width)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch, out_len, n_in * width)
    wmat = kernels.values.reshape(n_out, n_in * width)
    out = (cols @ wmat.T).transpose(0, 2, 1)

    def backward(g):
        gt = g.transpose(0, 2, 1)  # (batch, out_len, n_out)
        gw = (gt.reshape(-1, n_out).T @ cols.reshape(-1, n_in * width)).reshape(kernels.shape)
        dcols = (gt @ wmat).reshape(batch, out_len, n_in, width)
        gxp = np.zeros_like(xp)
        span = (out_len - 1) * stride + 1
        for k in range(width):
            gxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        return gxp[:, :, pad:pad + length], gw

    result = make_result(out, (x, kernels), backward)
    if bias is not None:
        result = add(result, reshape(bias, (1, n_out, 1)))
    return result


def dropout(x, p: float, rng) -> Tensor:
    """Inverted dropout: multiply by a fresh mask from :func:`dropout_mask`."""
    if p == 0:
        return as_tensor(x)
    from .rng import dropout_mask
    return mul(x, dropout_mask(as_tensor(x).shape, p, rng))
