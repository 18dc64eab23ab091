"""Differentiable primitives over :class:`Tensor`.

All functions accept tensors, numpy arrays or python scalars; non-tensor
arguments are treated as constants.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result

__all__ = [
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt", "abs",
    "square", "sigmoid", "relu", "tanh", "matmul", "sum", "mean", "reshape",
    "permute", "transpose", "getitem", "concat", "stack", "pad", "softmax",
    "gumbel_softmax", "layer_norm", "conv3d", "upsample_nearest", "expand",
    "where_const", "unbroadcast",
]


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    ad = a.data
    return make_result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    ad = a.data
    return make_result(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return make_result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: (g * (1.0 - out * out),))


def where_const(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` else ``b``; ``mask`` is a constant."""
    a, b = as_tensor(a), as_tensor(b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.shape, b.shape
    return make_result(
        np.where(mask, a.data, b.data), (a, b),
        lambda g: (unbroadcast(np.where(mask, g, 0.0), sa),
                   unbroadcast(np.where(mask, 0.0, g), sb)))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product (operands must be at least 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad @ bd, (a, b), bw)


# -- reductions ----------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axes(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return make_result(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / n)


# -- shape manipulation --------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes), (a,),
                       lambda g: (np.transpose(g, inv),))


def transpose(a, ax0: int = -2, ax1: int = -1) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[ax0], axes[ax1] = axes[ax1], axes[ax0]
    return permute(a, axes)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic_index(idx)

    def bw(g):
        out = np.zeros(shape)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_result(a.data[idx], (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    axis = axis % ts[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        out = []
        for i in range(len(ts)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            out.append(g[tuple(sl)])
        return out

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in ts], axis=axis)


def expand(a, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (materialised)."""
    a = as_tensor(a)
    old = a.shape
    return make_result(np.broadcast_to(a.data, shape).copy(), (a,),
                       lambda g: (unbroadcast(g, old),))


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` as in ``np.pad`` (one pair per axis)."""
    a = as_tensor(a)
    widths = [tuple(w) for w in widths]
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_result(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def upsample_nearest(a, factors: Sequence[int], axes: Sequence[int]) -> Tensor:
    """Repeat ``a`` by integer ``factors`` along ``axes``."""
    a = as_tensor(a)
    out = a.data
    for f, ax in zip(factors, axes):
        out = np.repeat(out, f, axis=ax)
    shape = a.shape

    def bw(g):
        for f, ax in zip(factors, axes):
            ax = ax % g.ndim
            new = g.shape[:ax] + (g.shape[ax] // f, f) + g.shape[ax + 1:]
            g = g.reshape(new).sum(axis=ax + 1)
        return (g.reshape(shape),)

    return make_result(out, (a,), bw)


# -- normalisation / probability ------------------------------------------------

def _softmax_np(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"softmax axis {axis} out of range for rank {a.ndim}")
    out = _softmax_np(a.data, axis)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (a,), bw)


def gumbel_noise(shape, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, 1.0 - 1e-16)))


def gumbel_softmax(a, axis: int = -1, temperature: float = 1.0, hard: bool = False,
                   seed: int = 0) -> Tensor:
    """Gumbel-Softmax relaxation; ``hard`` gives a straight-through one-hot."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for rank {a.ndim}")
    g = gumbel_noise(a.shape, seed)
    soft = _softmax_np((a.data + g) / temperature, axis)
    if hard:
        idx = np.argmax(a.data + g, axis=axis)
        out = np.zeros_like(soft)
        np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    else:
        out = soft

    def bw(gr):
        return (soft * (gr - (gr * soft).sum(axis=axis, keepdims=True)) / temperature,)

    return make_result(out, (a,), bw)


def layer_norm(a, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply optional affine parameters."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        gx = (inv / n) * (n * g - g.sum(axis=-1, keepdims=True)
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    out = make_result(xhat, (a,), bw)
    if weight is not None:
        out = mul(out, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# -- convolution ----------------------------------------------------------------

def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """3-D cross-correlation with zero padding.

    x: (N, Cin, D, H, W); weight: (Cout, Cin, kd, kh, kw); bias: (Cout,).
    ``stride`` and ``padding`` are ints or per-axis triples.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError("conv3d expects 5-D input and weight")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv3d channel mismatch: input {x.shape[1]}, weight {weight.shape[1]}")
    s = (stride,) * 3 if np.isscalar(stride) else tuple(stride)
    p = (padding,) * 3 if np.isscalar(padding) else tuple(padding)
    xd, wd = x.data, weight.data
    n, cin = xd.shape[:2]
    cout, _, kd, kh, kw = wd.shape
    xp = np.pad(xd, ((0, 0), (0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2]))) if any(p) else xd
    dims = xp.shape[2:]
    od = tuple((dims[i] - k) // s[i] + 1 for i, k in enumerate((kd, kh, kw)))
    if min(od) < 1:
        raise ValueError("conv3d output would be empty")

    def window(i, j, k):
        return (slice(None), slice(None),
                slice(i, i + s[0] * (od[0] - 1) + 1, s[0]),
                slice(j, j + s[1] * (od[1] - 1) + 1, s[1]),
                slice(k, k + s[2] * (od[2] - 1) + 1, s[2]))

    offsets = [(i, j, k) for i in range(kd) for j in range(kh) for k in range(kw)]
    out = np.zeros((cout, n) + od)
    for (i, j, k) in offsets:
        out += np.tensordot(wd[:, :, i, j, k], xp[window(i, j, k)], axes=([1], [1]))
    out = out.transpose(1, 0, 2, 3, 4)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data.reshape(1, -1, 1, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for (i, j, k) in offsets:
                gw[:, :, i, j, k] = np.tensordot(g, xp[window(i, j, k)],
                                                 axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            gt = g.transpose(1, 0, 2, 3, 4)
            for (i, j, k) in offsets:
                contrib = np.tensordot(wd[:, :, i, j, k], gt, axes=([0], [0]))
                gxp[window(i, j, k)] += contrib.transpose(1, 0, 2, 3, 4)
            gx = gxp[:, :, p[0]:p[0] + xd.shape[2], p[1]:p[1] + xd.shape[3],
                     p[2]:p[2] + xd.shape[4]]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return (gx, gw) if bias is None else (gx, gw, gb)

    return make_result(out, inputs, bw)
