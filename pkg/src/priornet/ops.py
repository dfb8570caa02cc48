"""Differentiable operations over :class:`~priornet.tensor.Tensor`.

Image ops accept (C, H, W) or batched (N, C, H, W) inputs. Broadcasting is
deliberately narrow: elementwise ops only accept identical shapes, a
single-channel map (..., 1, H, W) against (..., C, H, W), or a Python scalar.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from priornet.errors import InputTooSmallError, ShapeError
from priornet.tensor import Tensor

# When set to a list, non-smooth ops append their branch choice (ReLU masks,
# max-pool argmax) so finite-difference checks can detect kink crossings.
_branch_trace: list[np.ndarray] | None = None


class trace_branches:
    """Context manager collecting the branch choices of non-smooth ops."""

    def __enter__(self) -> list[np.ndarray]:
        global _branch_trace
        self._prev = _branch_trace
        _branch_trace = []
        return _branch_trace

    def __exit__(self, *exc):
        global _branch_trace
        _branch_trace = self._prev
        return False


def _const(x: Tensor | float) -> bool:
    return not isinstance(x, Tensor)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=-3, keepdims=True)


def _check_elementwise(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == b.ndim and a.ndim >= 3:
        sa, sb = list(a.shape), list(b.shape)
        if (sa[-3] == 1 or sb[-3] == 1) and sa[:-3] == sb[:-3] and sa[-2:] == sb[-2:]:
            return
    raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} are not compatible "
                     "(only equal shapes or a 1xHxW map against CxHxW are allowed)")


# -- elementwise -----------------------------------------------------------

def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    if _const(a):
        a, b = b, a
    if _const(b):
        c = b
        return Tensor.from_op(a.data + np.asarray(c, dtype=a.dtype), (a,), lambda g: (g,))
    _check_elementwise(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b),
                          lambda g: (_sum_to(g, a.shape), _sum_to(g, b.shape)))


def sub(a: Tensor, b: Tensor | float) -> Tensor:
    if _const(b):
        return add(a, -b)
    _check_elementwise(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b),
                          lambda g: (_sum_to(g, a.shape), -_sum_to(g, b.shape)))


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    if _const(a):
        a, b = b, a
    if _const(b):
        c = np.asarray(b, dtype=a.dtype)
        return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,))
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad * bd, (a, b),
                          lambda g: (_sum_to(g * bd, a.shape), _sum_to(g * ad, b.shape)))


elementwise_add = add
elementwise_mul = mul


def scale_channels(x: Tensor, v: Tensor) -> Tensor:
    """Multiply each channel plane of ``x`` (..., C, H, W) by ``v`` (..., C)."""
    if x.ndim < 3 or v.shape != x.shape[:-2]:
        raise ShapeError(f"scale_channels: gate shape {v.shape} does not match channels of {x.shape}")
    xd, vd = x.data, v.data[..., None, None]
    return Tensor.from_op(xd * vd, (x, v),
                          lambda g: (g * vd, (g * xd).sum(axis=(-2, -1))))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _branch_trace is not None:
        _branch_trace.append(mask)
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1 - s),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    s = e / e.sum(axis=axis, keepdims=True)
    return Tensor.from_op(s, (x,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


# -- linear ----------------------------------------------------------------

def _im2col(xd: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Zero-padded patches as a (C*k*k, N*Ho*Wo) matrix, plus the padded input."""
    p = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)
    return cols, xp, ho, wo


def _conv_forward(xd: np.ndarray, wd: np.ndarray, stride: int):
    o, c, k, _ = wd.shape
    cols, xp, ho, wo = _im2col(xd, k, stride)
    out = np.einsum("ok,kn->on", wd.reshape(o, -1), cols).reshape(o, xd.shape[0], ho, wo).transpose(1, 0, 2, 3)
    return out, cols, xp


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation with zero "same" padding of (k - 1) / 2.

    ``weight`` is (C_out, C_in, k, k) with k odd. With ``stride`` s the
    output is sampled at every s-th input position, giving ceil(H / s) rows.
    """
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be C_out x C_in x k x k, got {weight.shape}")
    k = weight.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {k}")
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be CxHxW or NxCxHxW, got {x.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    o = weight.shape[0]
    if c != weight.shape[1]:
        raise ShapeError(f"conv2d: input channels {c} != weight in-channels {weight.shape[1]}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias length {bias.shape} != out-channels {o}")

    wd = weight.data
    out, cols, xp = _conv_forward(xd, wd, stride)
    ho, wo = out.shape[2:]
    if bias is not None:
        out = out + bias.data[:, None, None]
    out = np.ascontiguousarray(out if batched else out[0])

    def vjp(g):
        g4 = g if batched else g[None]
        gm = g4.transpose(1, 0, 2, 3).reshape(o, -1)
        dw = (cols @ gm.T).T.reshape(wd.shape)
        if stride == 1:
            # same-padded correlation with the flipped, channel-swapped kernel
            dx = _conv_forward(g4, np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)), 1)[0]
        else:
            p = (k - 1) // 2
            dcols = (wd.reshape(o, -1).T @ gm).reshape(c, k, k, n, ho, wo)
            dxp = np.zeros_like(xp)
            for u in range(k):
                for v in range(k):
                    dxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += \
                        dcols[:, u, v].transpose(1, 0, 2, 3)
            dx = dxp[:, :, p:p + h, p:p + w]
        if not batched:
            dx = dx[0]
        grads = [dx, dw]
        if bias is not None:
            grads.append(g4.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, inputs, vjp)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``weight @ x + bias`` applied over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"fully_connected: input length {x.shape[-1]} does not match "
                         f"weight {weight.shape}")
    m = weight.shape[0]
    if bias is not None and bias.shape != (m,):
        raise ShapeError(f"fully_connected: bias length {bias.shape} != output length {m}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def vjp(g):
        g2 = g.reshape(-1, m)
        grads = [g @ wd, g2.T @ xd.reshape(-1, xd.shape[-1])]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, inputs, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match exactly."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b),
                          lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g))


# -- shape -----------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc
    src = x.shape
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(src),))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis (-3), first argument's channels first."""
    if not xs:
        raise ShapeError("concat_channels: nothing to concatenate")
    ref = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(ref) or t.shape[:-3] != ref[:-3] or t.shape[-2:] != ref[-2:]:
            raise ShapeError(f"concat_channels: {t.shape} does not match {ref} outside the channel axis")
    sizes = [t.shape[-3] for t in xs]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in xs], axis=-3)
    return Tensor.from_op(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=-3)))


def upsample_nearest(x: Tensor, height: int, width: int) -> Tensor:
    """Nearest-neighbour resize of the last two axes.

    Output pixel (i, j) reads source pixel (i * Hs // height, j * Ws // width).
    """
    hs, ws = x.shape[-2:]
    ri = (np.arange(height) * hs) // height
    ci = (np.arange(width) * ws) // width
    out = x.data[..., ri, :][..., ci]
    # One-hot selection matrices turn the scatter-add into two products.
    rsel = np.zeros((height, hs), dtype=x.dtype)
    rsel[np.arange(height), ri] = 1
    csel = np.zeros((width, ws), dtype=x.dtype)
    csel[np.arange(width), ci] = 1
    return Tensor.from_op(out, (x,), lambda g: (rsel.T @ g @ csel,))


# -- pooling and reductions --------------------------------------------------

def avg_pool_global(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (..., C, H, W) -> (..., C)."""
    h, w = x.shape[-2:]
    out = x.data.mean(axis=(-2, -1), dtype=np.float64).astype(x.dtype)
    shape = x.shape
    return Tensor.from_op(out, (x,),
                          lambda g: (np.broadcast_to(g[..., None, None] / (h * w), shape).copy(),))


def max_pool_global(x: Tensor) -> Tensor:
    """Max over the two spatial axes; ties route the gradient to the first maximum."""
    flat = x.data.reshape(*x.shape[:-2], -1)
    idx = flat.argmax(axis=-1)[..., None]
    if _branch_trace is not None:
        _branch_trace.append(idx)
    out = np.take_along_axis(flat, idx, axis=-1)[..., 0]
    shape = x.shape

    def vjp(g):
        d = np.zeros_like(flat)
        np.put_along_axis(d, idx, g[..., None], axis=-1)
        return (d.reshape(shape),)

    return Tensor.from_op(out, (x,), vjp)


def sliding_avg_pool(x: Tensor, window: int = 8, stride: int = 4) -> Tensor:
    """Windowed mean; output extent is floor((H - window) / stride) + 1 per axis."""
    h, w = x.shape[-2:]
    if h < window or w < window:
        raise InputTooSmallError(
            f"sliding_avg_pool: input {h}x{w} is smaller than the {window}x{window} window; "
            f"images must be at least {window}x{window} pixels")
    win = sliding_window_view(x.data, (window, window), axis=(-2, -1))[..., ::stride, ::stride, :, :]
    ho, wo = win.shape[-4], win.shape[-3]
    out = win.mean(axis=(-2, -1))
    scale = 1.0 / (window * window)

    def vjp(g):
        d = np.zeros_like(x.data)
        gs = g * scale
        for u in range(window):
            for v in range(window):
                d[..., u:u + stride * ho:stride, v:v + stride * wo:stride] += gs
        return (d,)

    return Tensor.from_op(out.astype(x.dtype), (x,), vjp)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(dtype=np.float64), dtype=x.dtype)
    shape = x.shape
    return Tensor.from_op(out, (x,), lambda g: (np.full(shape, g, dtype=g.dtype),))


def mean(x: Tensor) -> Tensor:
    """Scalar mean, accumulated in float64."""
    n = x.size
    out = np.asarray(x.data.mean(dtype=np.float64), dtype=x.dtype)
    shape = x.shape
    return Tensor.from_op(out, (x,), lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return Tensor.from_op(xd * xd, (x,), lambda g: (2 * g * xd,))
