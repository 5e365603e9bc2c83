"""Minimal dense-tensor engine with tape-based reverse-mode differentiation."""
from . import _backend
from .core import DTYPES, Tape, Tensor, as_tensor, backward, current_tape, result
from .ops import (
    LN_EPS,
    adaptive_avg_pool,
    add,
    concat_channels,
    conv2d_1x1,
    conv2d_3x3,
    conv2d_dw3x3,
    gelu,
    layer_norm,
    matmul_batched,
    mul,
    mul_elementwise,
    pixel_shuffle,
    pixel_unshuffle,
    repeat_channels,
    reshape,
    scale,
    slice_channels,
    softmax_lastdim,
    split_channels,
    sum_all,
    transpose,
)


def backend() -> str:
    """Name of the active kernel backend: "cython" or "python"."""
    return _backend.BACKEND


def use_backend(name: str) -> None:
    _backend.use(name)


__all__ = [
    "DTYPES", "LN_EPS", "Tape", "Tensor", "adaptive_avg_pool", "add", "as_tensor", "backend",
    "backward", "concat_channels", "conv2d_1x1", "conv2d_3x3", "conv2d_dw3x3", "current_tape",
    "gelu", "layer_norm", "matmul_batched", "mul", "mul_elementwise", "pixel_shuffle",
    "pixel_unshuffle", "repeat_channels", "reshape", "result", "scale", "slice_channels",
    "softmax_lastdim", "split_channels", "sum_all", "transpose", "use_backend",
]
