"""Dense NCHW float64 primitives with hand-written vector-Jacobian products.

Each forward function returns ``(out, vjp)``; ``vjp(g)`` maps the upstream
gradient to a tuple of gradients, one per differentiable input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class TensorShapeError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise TensorShapeError(f"expected a non-empty rank-4 NCHW tensor, got shape {arr.shape}")
    return arr


def _windows(xp, k, stride, ho, wo):
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]


def conv2d(x, weight, bias=None, stride=1):
    """Same-padded cross-correlation with padding ``k // 2``."""
    n, c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c or k != k2:
        raise TensorShapeError(f"conv weight {weight.shape} incompatible with input {x.shape}")
    pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = _windows(xp, k, stride, ho, wo)
    out = np.einsum("nchwij,ocij->nohw", win, weight, optimize=True)
    if bias is not None:
        out += bias[None, :, None, None]

    def vjp(g):
        dw = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        dwin = np.einsum("nohw,ocij->nchwij", g, weight, optimize=True)
        dxp = np.zeros(xp.shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dwin[..., i, j]
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return dx, dw, db

    return out, vjp


def relu(x):
    mask = x > 0
    return x * mask, lambda g: (g * mask,)


def identity(x):
    return x, lambda g: (g,)


def nearest_up2(x):
    out = x.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return out, vjp


def _blocks(x, f):
    n, c, h, w = x.shape
    if h % f or w % f:
        raise TensorShapeError(f"spatial size {h}x{w} not divisible by pooling factor {f}")
    return x.reshape(n, c, h // f, f, w // f, f)


def avgpool(x, f):
    out = _blocks(x, f).mean(axis=(3, 5))

    def vjp(g):
        g = g / (f * f)
        return (g.repeat(f, axis=2).repeat(f, axis=3),)

    return out, vjp


def avgpool2(x):
    return avgpool(x, 2)


def maxpool2(x):
    b = _blocks(x, 2)
    n, c, h, _, w, _ = b.shape
    flat = b.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w, 4)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        d = np.zeros((n, c, h, w, 4))
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (d.reshape(n, c, 2 * h, 2 * w),)

    vjp.argmax = arg
    return out, vjp


def bn_infer(x, gamma, beta, mean, var, eps=1e-5):
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def vjp(g):
        dx = g * (gamma * inv)[None, :, None, None]
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return out, vjp


def tensor_sum(tensors):
    """Left-to-right sum; operand order is the caller's contract."""
    if not tensors:
        raise TensorShapeError("sum of an empty operand list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise TensorShapeError(f"cannot sum tensors of shapes {shape} and {t.shape}")
    acc = tensors[0].copy()
    for t in tensors[1:]:
        acc = acc + t
    return acc
