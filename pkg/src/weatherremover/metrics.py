"""Pseudo-Huber training loss and PSNR / SSIM fidelity metrics.

Images live in [0, 1]; metric peak is 1.0.  SSIM uses an 11x11 Gaussian
window (sigma 1.5), K1 = 0.01, K2 = 0.03 and averages the local SSIM map over
the fully-covered ("valid") window positions, then over channels and batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, result


@dataclass(frozen=True)
class LossConfig:
    c: float = 0.03
    reduction: str = "mean-over-batch"

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"pseudo-Huber c must be positive, got {self.c}")
        if self.reduction != "mean-over-batch":
            raise ValueError(f"unsupported reduction {self.reduction!r}")


def pseudo_huber(target: Tensor, restored: Tensor, c: float = 0.03) -> Tensor:
    """Batch mean of sqrt(||Y - I||^2 + c^2) - c, the norm taken per flattened sample."""
    if not c > 0:
        raise ValueError(f"pseudo-Huber c must be positive, got {c}")
    if target.shape != restored.shape:
        raise ShapeError(f"pseudo_huber: shapes differ, {target.shape} vs {restored.shape}")
    B = target.shape[0] if target.ndim > 1 else 1
    r = (restored.data - target.data).reshape(B, -1)
    sq = np.einsum("bi,bi->b", r, r)
    root = np.sqrt(sq + c * c)
    # sqrt(s + c^2) - c written as s / (sqrt(s + c^2) + c) keeps precision for small s
    per = sq / (root + c)
    loss = np.asarray(per.mean(), dtype=restored.dtype)

    def backward(g):
        d = (g / B) * r / root[:, None]
        d = d.reshape(restored.shape).astype(restored.dtype, copy=False)
        return -d, d

    return result("pseudo_huber", loss, (target, restored), backward)


# ------------------------------------------------------------------ metrics

def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = taps.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-1) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-2) @ taps


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, window: int = SSIM_WINDOW,
             sigma: float = SSIM_SIGMA, k1: float = SSIM_K1, k2: float = SSIM_K2) -> np.ndarray:
    """Local SSIM over the last two axes at every fully-covered window position."""
    if a.shape[-1] < window or a.shape[-2] < window:
        raise ValueError(f"ssim: image {a.shape[-2]}x{a.shape[-1]} is smaller than the {window}x{window} window")
    taps = gaussian_window(window, sigma)
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    s_aa = _filter_valid(a * a, taps) - mu_a * mu_a
    s_bb = _filter_valid(b * b, taps) - mu_b * mu_b
    s_ab = _filter_valid(a * b, taps) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0, **kwargs) -> float:
    """Mean SSIM for (H, W), (C, H, W) or (B, C, H, W) inputs, averaged over channels."""
    a, b = _array(a), _array(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3, 4):
        raise ShapeError(f"ssim: expected 2-4 dimensions, got {a.shape}")
    m = ssim_map(a, b, data_range, **kwargs)
    # average over the spatial map first, so every channel weighs the same
    return float(m.mean(axis=(-2, -1)).mean())
