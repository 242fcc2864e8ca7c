"""Differentiable primitives over :class:`~xattn.tensor.Tensor`.

Every function takes and returns tensors (plain numbers are promoted) and
records a vector-Jacobian product on the active tape when any operand is
tracked. Images and feature maps are laid out channel-first, ``C x H x W``.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, DimensionError, Tensor, record

Operand = Union[Tensor, float, int, np.ndarray]


def as_tensor(x: Operand) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise

def add(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return record("add", a.data + b.data, (a, b), vjp)


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return record("sub", a.data - b.data, (a, b), vjp)


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.data, b.data

    def vjp(g, needs):
        return (_unbroadcast(g * y, x.shape) if needs[0] else None,
                _unbroadcast(g * x, y.shape) if needs[1] else None)

    return record("mul", x * y, (a, b), vjp)


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.data)
    return record("exp", y, (t,), lambda g, needs: (g * y,))


def log(t: Tensor) -> Tensor:
    x = t.data
    with np.errstate(divide="ignore"):
        y = np.log(x)

    def vjp(g, needs):
        # zero cotangent at x == 0 stays zero instead of 0/0
        out = np.zeros_like(g)
        np.divide(g, x, out=out, where=g != 0)
        return (out,)

    return record("log", y, (t,), vjp)


def leaky_relu(t: Tensor, alpha: float = 0.2) -> Tensor:
    x = t.data
    slope = np.where(x >= 0, 1.0, alpha)
    return record("leaky_relu", x * slope, (t,), lambda g, needs: (g * slope,))


def softplus(t: Tensor) -> Tensor:
    """log(1 + exp(x)), overflow-free."""
    x = t.data
    y = np.logaddexp(0.0, x)

    def vjp(g, needs):
        return (g * np.exp(x - y),)  # sigmoid(x)

    return record("softplus", y, (t,), vjp)


# ---------------------------------------------------------------------------
# shape

def reshape(t: Tensor, shape) -> Tensor:
    src = t.shape
    y = t.data.reshape(shape)
    return record("reshape", y, (t,), lambda g, needs: (g.reshape(src),))


def transpose(t: Tensor) -> Tensor:
    if t.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {t.shape}")
    return record("transpose", t.data.T, (t,), lambda g, needs: (g.T,))


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Join along the channel axis (third from last)."""
    if a.ndim not in (3, 4) or a.ndim != b.ndim or a.shape[:-3] != b.shape[:-3] \
            or a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(f"cannot concatenate channels of {a.shape} and {b.shape}")
    c1 = a.shape[-3]
    y = np.concatenate([a.data, b.data], axis=-3)

    def vjp(g, needs):
        return (g[..., :c1, :, :] if needs[0] else None, g[..., c1:, :, :] if needs[1] else None)

    return record("concat_channels", y, (a, b), vjp)


def stack(tensors) -> Tensor:
    """Stack equally shaped tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError(f"cannot stack shapes {[t.shape for t in tensors]}")
    y = np.stack([t.data for t in tensors])

    def vjp(g, needs):
        return [g[i] if need else None for i, need in enumerate(needs)]

    return record("stack", y, tensors, vjp)


def unstack(t: Tensor) -> list:
    return [take(t, i) for i in range(t.shape[0])]


def take(t: Tensor, i: int) -> Tensor:
    """Slice ``t[i]`` along the leading axis."""
    shape = t.shape

    def vjp(g, needs):
        out = np.zeros(shape)
        out[i] = g
        return (out,)

    return record("take", t.data[i], (t,), vjp)


# ---------------------------------------------------------------------------
# reductions

def sum(t: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    x = t.data
    y = x.sum(axis=axis)

    def vjp(g, needs):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return record("sum", y, (t,), vjp)


def mean(t: Tensor) -> Tensor:
    return mul(sum(t), 1.0 / t.size)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    x, y = a.data, b.data

    def vjp(g, needs):
        return (g @ y.T if needs[0] else None, x.T @ g if needs[1] else None)

    return record("matmul", x @ y, (a, b), vjp)


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    if not -t.ndim <= axis < t.ndim:
        raise ContractError(f"axis {axis} out of range for rank {t.ndim}")
    x = t.data
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g, needs):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record("softmax", y, (t,), vjp)


def log_softmax(t: Tensor, axis: int = -1) -> Tensor:
    if not -t.ndim <= axis < t.ndim:
        raise ContractError(f"axis {axis} out of range for rank {t.ndim}")
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def vjp(g, needs):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", y, (t,), vjp)


def nll_loss(log_prob: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Mean of ``-log_prob[label[p], p]`` over pixels whose label is not ignored.

    ``log_prob`` is ``L x H x W``; an empty valid set yields 0 (with zero gradient).
    """
    labels = np.asarray(labels)
    if log_prob.ndim != 3 or log_prob.shape[1:] != labels.shape:
        raise DimensionError(f"prediction {log_prob.shape} does not match labels {labels.shape}")
    valid = labels != ignore_index
    n = int(valid.sum())
    rows, cols = np.nonzero(valid)
    cls = labels[rows, cols].astype(np.intp)
    picked = log_prob.data[cls, rows, cols]
    value = -picked.sum() / n if n else 0.0

    def vjp(g, needs):
        out = np.zeros(log_prob.shape)
        if n:
            out[cls, rows, cols] = -g / n
        return (out,)

    return record("nll_loss", np.asarray(value), (log_prob,), vjp)


# ---------------------------------------------------------------------------
# convolution / resampling

def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of a ``C_in x H x W`` map with ``C_out x C_in x k x k`` weights.

    A leading batch axis (``N x C_in x H x W``) is also accepted.
    """
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise DimensionError(f"conv2d expects CxHxW input and 4-d weight, got {x.shape}, {weight.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, cin, h, w = xd.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ContractError("stride must be positive and padding non-negative")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    w2 = weight.data.reshape(cout, -1)
    operands = (x, weight) if bias is None else (x, weight, bias)
    pointwise = kh == kw == 1 and stride == 1 and padding == 0

    if pointwise:
        cols = xd.transpose(1, 0, 2, 3).reshape(cin, -1) if n > 1 else xd.reshape(cin, -1)
    else:
        if padding:
            xp = np.zeros((n, cin, hp, wp))
            xp[:, :, padding:padding + h, padding:padding + w] = xd
        else:
            xp = xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        # (n, cin, ho, wo, kh, kw) -> (cin, kh, kw, n, ho, wo)
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(cin * kh * kw, n * ho * wo)
    out = w2 @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(cout, n, ho, wo)
    out = out.transpose(1, 0, 2, 3) if batched else out[:, 0]

    def vjp(g, needs):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1) if batched else g.reshape(cout, -1)
        gx = gw = gb = None
        if needs[1]:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if bias is not None and needs[2]:
            gb = g2.sum(axis=1)
        if needs[0]:
            dcols = w2.T @ g2
            if pointwise:
                gx = dcols.reshape(cin, n, h, w).transpose(1, 0, 2, 3)
            else:
                dcols = dcols.reshape(cin, kh, kw, n, ho, wo)
                dxp = np.zeros((cin, n, hp, wp))
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
                gx = dxp[:, :, padding:padding + h, padding:padding + w].transpose(1, 0, 2, 3)
            if not batched:
                gx = gx[0]
        return (gx, gw) if bias is None else (gx, gw, gb)

    return record("conv2d", np.ascontiguousarray(out), operands, vjp)


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # align_corners=False: src = (dst + 0.5) * n_in / n_out - 0.5, clamped at 0
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for d in range(n_out):
        src = max((d + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise ContractError(f"output size must be positive, got {out_h}x{out_w}")
    if x.ndim not in (3, 4):
        raise DimensionError(f"bilinear_resize expects CxHxW or NxCxHxW, got {x.shape}")
    h, w = x.shape[-2:]
    if (h, w) == (out_h, out_w):
        return record("bilinear_resize", x.data.copy(), (x,), lambda g, needs: (g,))
    ry = _interp_matrix(h, out_h)
    rx = _interp_matrix(w, out_w)
    y = ry @ x.data @ rx.T

    def vjp(g, needs):
        return (ry.T @ g @ rx,)

    return record("bilinear_resize", y, (x,), vjp)
