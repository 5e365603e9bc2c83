"""Differentiable primitives.

Image tensors are (B, C, H, W).  Attention tensors use (B, heads, tokens, d)
so the same rank-4 value type carries the whole network.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ShapeError
from . import _backend
from .core import Tensor, result

LN_EPS = 1e-6


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a)


def _check_image(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected a (B, C, H, W) tensor, got shape {x.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- convolutions

def conv2d_1x1(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Pointwise convolution: y[b,o,h,w] = sum_i weight[o,i] x[b,i,h,w] + bias[o]."""
    _check_image(x, "conv2d_1x1")
    B, Cin, H, W = x.shape
    if weight.ndim != 2 or weight.shape[1] != Cin:
        raise ShapeError(f"conv2d_1x1: weight {weight.shape} does not match {Cin} input channels")
    Cout = weight.shape[0]
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d_1x1: bias {bias.shape} does not match {Cout} outputs")
    x3 = x.data.reshape(B, Cin, H * W)
    y = np.matmul(weight.data, x3)
    if bias is not None:
        y += bias.data[None, :, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = g.reshape(B, Cout, H * W)
        gx = np.matmul(weight.data.T, g3).reshape(B, Cin, H, W) if x.requires_grad else None
        gw = np.einsum("bon,bin->oi", g3, x3) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return result("conv2d_1x1", y.reshape(B, Cout, H, W), inputs, backward)


def conv2d_dw3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Depthwise 3x3 cross-correlation, stride 1, zero padding 1."""
    _check_image(x, "conv2d_dw3x3")
    C = x.shape[1]
    if weight.shape != (C, 3, 3):
        raise ShapeError(f"conv2d_dw3x3: weight {weight.shape} does not match {C} channels")
    if bias is not None and bias.shape != (C,):
        raise ShapeError(f"conv2d_dw3x3: bias {bias.shape} does not match {C} channels")
    xd, wd = _c(x.data), _c(weight.data)
    y = _backend.kernels.dw3x3_forward(xd, wd)
    if bias is not None:
        y += bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx, gw = _backend.kernels.dw3x3_backward(xd, wd, _c(g.astype(xd.dtype, copy=False)))
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return result("conv2d_dw3x3", y, inputs, backward)


def conv2d_3x3(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dense 3x3 convolution, stride 1, zero padding 1 (im2col + matmul)."""
    _check_image(x, "conv2d_3x3")
    B, Cin, H, W = x.shape
    if weight.ndim != 4 or weight.shape[1:] != (Cin, 3, 3):
        raise ShapeError(f"conv2d_3x3: weight {weight.shape} does not match {Cin} input channels")
    Cout = weight.shape[0]
    if bias is not None and bias.shape != (Cout,):
        raise ShapeError(f"conv2d_3x3: bias {bias.shape} does not match {Cout} outputs")
    cols = _backend.kernels.im2col3x3(_c(x.data))
    w2 = weight.data.reshape(Cout, Cin * 9)
    y = np.matmul(w2, cols)
    if bias is not None:
        y += bias.data[None, :, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g3 = g.reshape(B, Cout, H * W)
        gx = None
        if x.requires_grad:
            gx = _backend.kernels.col2im3x3(_c(np.matmul(w2.T, g3)), H, W)
        gw = np.einsum("bon,bkn->ok", g3, cols).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return result("conv2d_3x3", y.reshape(B, Cout, H, W), inputs, backward)


# ------------------------------------------------------------------- pooling

def adaptive_avg_pool(x: Tensor, P: int) -> Tensor:
    """Average-pool (B, C, H, W) to (B, C, P, P) with floor/ceil bin edges."""
    _check_image(x, "adaptive_avg_pool")
    if not isinstance(P, (int, np.integer)) or P <= 0:
        raise ValueError(f"adaptive_avg_pool: pool size must be a positive integer, got {P!r}")
    H, W = x.shape[2], x.shape[3]
    if H < 1 or W < 1:
        raise ShapeError("adaptive_avg_pool: empty spatial extent")
    y = _backend.kernels.adaptive_pool_forward(_c(x.data), int(P))

    def backward(g):
        return (_backend.kernels.adaptive_pool_backward(_c(g.astype(x.dtype, copy=False)), H, W),)

    return result("adaptive_avg_pool", y, (x,), backward)


# ------------------------------------------------------------- normalisation

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise the channel vector at every (b, h, w) position, then scale-shift."""
    _check_image(x, "layer_norm")
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} != ({C},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    g4 = gamma.data[None, :, None, None]
    y = xhat * g4 + beta.data[None, :, None, None]

    def backward(g):
        gg = gb = gx = None
        if gamma.requires_grad:
            gg = np.einsum("bchw,bchw->c", g, xhat)
        if beta.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gh = g * g4
            gx = rstd * (gh - gh.mean(axis=1, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=1, keepdims=True))
        return gx, gg, gb

    return result("layer_norm", y, (x, gamma, beta), backward)


# --------------------------------------------------------------- activations

def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = _c(x.data)
    y, t = _backend.kernels.gelu_forward(xd)

    def backward(g):
        return (_backend.kernels.gelu_backward(xd, t, g),)

    return result("gelu", y, (x,), backward)


def softmax_lastdim(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return result("softmax_lastdim", s, (x,), backward)


# ------------------------------------------------------ elementwise & algebra

def _as(t, like: Tensor) -> Tensor:
    if isinstance(t, Tensor):
        return t
    return Tensor(np.asarray(t, dtype=like.dtype))


def add(a: Tensor, b: Tensor) -> Tensor:
    b = _as(b, a)
    try:
        y = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {a.shape} vs {b.shape}") from e

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return result("add", y, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    b = _as(b, a)
    try:
        y = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}") from e

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return result("mul", y, (a, b), backward)


mul_elementwise = mul


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        return (g * s,)

    return result("scale", x.data * s, (x,), backward)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """(..., M, K) @ (..., K, N) -> (..., M, N) over identical leading dims."""
    if a.ndim < 3 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul_batched: {a.shape} @ {b.shape}")
    y = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return ga, gb

    return result("matmul_batched", y, (a, b), backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = tuple(xs)
    for t in xs:
        _check_image(t, "concat_channels")
        if t.shape[0] != xs[0].shape[0] or t.shape[2:] != xs[0].shape[2:]:
            raise ShapeError(f"concat_channels: {t.shape} vs {xs[0].shape}")
    y = np.concatenate([t.data for t in xs], axis=1)
    edges = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(xs)))

    return result("concat_channels", y, xs, backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_image(x, "slice_channels")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: [{start}:{stop}] outside {x.shape[1]} channels")

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, start:stop] = g
        return (gx,)

    return result("slice_channels", x.data[:, start:stop].copy(), (x,), backward)


def split_channels(x: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]}")
    out, start = [], 0
    for n in sizes:
        out.append(slice_channels(x, start, start + n))
        start += n
    return out


def repeat_channels(x: Tensor, r: int) -> Tensor:
    """Repeat each channel r times in place: [a, b] -> [a, a, b, b] for r=2."""
    _check_image(x, "repeat_channels")
    B, C, H, W = x.shape

    def backward(g):
        return (g.reshape(B, C, r, H, W).sum(axis=2),)

    return result("repeat_channels", np.repeat(x.data, r, axis=1), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {old} -> {shape}") from e

    def backward(g):
        return (g.reshape(old),)

    return result("reshape", y, (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return result("sum_all", np.asarray(x.data.sum()), (x,), backward)


# ------------------------------------------------------------ pixel shuffles

def _unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, C, H, W = a.shape
    a = a.reshape(B, C, H // r, r, W // r, r).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(a).reshape(B, C * r * r, H // r, W // r)


def _shuffle(a: np.ndarray, r: int) -> np.ndarray:
    B, C, H, W = a.shape
    a = a.reshape(B, C // (r * r), r, r, H, W).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(a).reshape(B, C // (r * r), H * r, W * r)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Space-to-depth: (B, C, H, W) -> (B, C*r*r, H/r, W/r)."""
    _check_image(x, "pixel_unshuffle")
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial {x.shape[2:]} not divisible by {r}")

    def backward(g):
        return (_shuffle(g, r),)

    return result("pixel_unshuffle", _unshuffle(x.data, r), (x,), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Depth-to-space: (B, C, H, W) -> (B, C/(r*r), H*r, W*r); inverse of unshuffle."""
    _check_image(x, "pixel_shuffle")
    if r < 1 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {x.shape[1]} channels not divisible by {r * r}")

    def backward(g):
        return (_unshuffle(g, r),)

    return result("pixel_shuffle", _shuffle(x.data, r), (x,), backward)
