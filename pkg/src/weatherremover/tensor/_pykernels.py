"""Pure numpy implementations of the hot kernels.

Every function here has a counterpart of the same name and signature in the
compiled ``_ckernels`` module; tests check the two agree.
"""
import math

import numpy as np


def dw3x3_forward(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Per-channel 3x3 cross-correlation, stride 1, zero padding 1."""
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    y = np.zeros_like(x)
    for ky in range(3):
        for kx in range(3):
            y += xp[:, :, ky:ky + H, kx:kx + W] * w[None, :, ky, kx, None, None]
    return y


def dw3x3_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ky in range(3):
        for kx in range(3):
            gxp[:, :, ky:ky + H, kx:kx + W] += gy * w[None, :, ky, kx, None, None]
            gw[:, ky, kx] = np.einsum("bchw,bchw->c", gy, xp[:, :, ky:ky + H, kx:kx + W])
    return gxp[:, :, 1:-1, 1:-1].copy(), gw


def pool_bins(n: int, p: int) -> list[tuple[int, int]]:
    """Bin i covers [floor(i*n/p), ceil((i+1)*n/p))."""
    return [(i * n // p, -(-(i + 1) * n // p)) for i in range(p)]


def adaptive_pool_forward(x: np.ndarray, p: int) -> np.ndarray:
    B, C, H, W = x.shape
    rows, cols = pool_bins(H, p), pool_bins(W, p)
    y = np.empty((B, C, p, p), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        band = x[:, :, r0:r1, :]
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = band[:, :, :, c0:c1].mean(axis=(2, 3))
    return y


def adaptive_pool_backward(gy: np.ndarray, H: int, W: int) -> np.ndarray:
    B, C, p, _ = gy.shape
    rows, cols = pool_bins(H, p), pool_bins(W, p)
    gx = np.zeros((B, C, H, W), dtype=gy.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            area = (r1 - r0) * (c1 - c0)
            gx[:, :, r0:r1, c0:c1] += (gy[:, :, i, j] / area)[:, :, None, None]
    return gx


def im2col3x3(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, C*9, H*W) patches for a padded 3x3 convolution."""
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((B, C, 9, H, W), dtype=x.dtype)
    for k in range(9):
        ky, kx = divmod(k, 3)
        cols[:, :, k] = xp[:, :, ky:ky + H, kx:kx + W]
    return cols.reshape(B, C * 9, H * W)


def col2im3x3(cols: np.ndarray, H: int, W: int) -> np.ndarray:
    B = cols.shape[0]
    C = cols.shape[1] // 9
    cols = cols.reshape(B, C, 9, H, W)
    gxp = np.zeros((B, C, H + 2, W + 2), dtype=cols.dtype)
    for k in range(9):
        ky, kx = divmod(k, 3)
        gxp[:, :, ky:ky + H, kx:kx + W] += cols[:, :, k]
    return gxp[:, :, 1:-1, 1:-1].copy()


_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def gelu_forward(x: np.ndarray):
    """Tanh-approximated GELU; returns (y, tanh term) for reuse in backward."""
    t = np.tanh(_SQRT_2_OVER_PI * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(x: np.ndarray, t: np.ndarray, gy: np.ndarray) -> np.ndarray:
    du = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
