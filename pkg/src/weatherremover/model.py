"""The WeatherRemover backbone: gated U-Net with MS-PVT blocks.

Layout (widths for base width D)::

    embed 3x3 (3 -> D)
    enc1 (D)  -> down1 -> enc2 (2D) -> down2 -> enc3 (4D) -> down3
    bottleneck (8D)
    up1 -> fuse1 + dec1 (4D) -> up2 -> fuse2 + dec2 (2D) -> up3 -> fuse3 + dec3 (D)
    refine (D) -> head 3x3 (D -> 3), added to the input image

Each encoder stage runs a chain of blocks P_m and, when ``gate_dstage`` is on,
one extra block P_b on the same input; the stage output is gelu(P_m) * P_b,
which is both the skip connection and the input to the downsampler.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import BlockSpec, block_param_shapes, mspvt_block
from .config import ModelConfig
from .errors import ShapeError
from .params import ParamStore, ParamView
from .tensor import Tensor

DTYPE_BY_NAME = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(precision) -> np.dtype:
    if isinstance(precision, str):
        try:
            return np.dtype(DTYPE_BY_NAME[precision])
        except KeyError:
            raise ValueError(f"precision must be one of {sorted(DTYPE_BY_NAME)}") from None
    return np.dtype(precision)


# ------------------------------------------------------------------ layout

def block_spec(config: ModelConfig, width: int, heads: int) -> BlockSpec:
    return BlockSpec(
        width=width, heads=heads, hidden=config.hidden(width), sra_size=config.sra_size,
        gate_gfn=config.gate_gfn, qkv_style=config.qkv_style, use_sra=config.use_sra,
        learn_temperature=config.learn_temperature,
    )


def _conv_shape(cout: int, cin: int, k: int) -> tuple[int, ...]:
    return (cout, cin) if k == 1 else (cout, cin, k, k)


def stage_plan(config: ModelConfig) -> list[tuple[str, BlockSpec, int]]:
    """Every block chain as (prefix, spec, count), in forward order."""
    plan = []
    for k, (w, h, n) in enumerate(zip(config.enc_widths, config.enc_heads, config.enc_blocks), 1):
        spec = block_spec(config, w, h)
        plan.append((f"enc{k}.main", spec, n))
        if config.gate_dstage:
            plan.append((f"enc{k}.gate", spec, 1))
    plan.append(("bottleneck", block_spec(config, config.latent_width, config.bottleneck_heads),
                 config.bottleneck_blocks))
    for k, (w, h, n) in enumerate(zip(config.dec_widths, config.dec_heads, config.dec_blocks), 1):
        spec = block_spec(config, w, h)
        plan.append((f"dec{k}.main", spec, n))
        if config.decoder_gating:
            plan.append((f"dec{k}.gate", spec, 1))
    plan.append(("refine", block_spec(config, config.base_dim, config.refine_heads), config.refine_blocks))
    return plan


def param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list for every parameter of the model."""
    D, K = config.base_dim, config.resample_kernel
    chains = {prefix: (spec, n) for prefix, spec, n in stage_plan(config)}
    out: list[tuple[str, tuple[int, ...]]] = [
        ("embed.weight", (D, config.in_channels, 3, 3)), ("embed.bias", (D,)),
    ]

    def chain(prefix):
        spec, n = chains[prefix]
        for i in range(n):
            out.extend((f"{prefix}.{i}.{name}", shape) for name, shape in block_param_shapes(spec))

    for k, w in enumerate(config.enc_widths, 1):
        chain(f"enc{k}.main")
        if config.gate_dstage:
            chain(f"enc{k}.gate")
        out += [(f"down{k}.weight", _conv_shape(w // 2, w, K)), (f"down{k}.bias", (w // 2,))]
    chain("bottleneck")
    prev = config.latent_width
    for k, w in enumerate(config.dec_widths, 1):
        out += [(f"up{k}.weight", _conv_shape(2 * prev, prev, K)), (f"up{k}.bias", (2 * prev,))]
        out += [(f"fuse{k}.weight", (w, 2 * w)), (f"fuse{k}.bias", (w,))]
        chain(f"dec{k}.main")
        if config.decoder_gating:
            chain(f"dec{k}.gate")
        prev = w
    chain("refine")
    out += [("head.weight", (config.in_channels, D, 3, 3)), ("head.bias", (config.in_channels,))]
    return out


# ------------------------------------------------------------ initialisation

def _fan_in(shape: tuple[int, ...]) -> int:
    if len(shape) == 2:
        return shape[1]
    if len(shape) == 3:          # depthwise (C, 3, 3)
        return 9
    return shape[1] * shape[2] * shape[3]


def init_value(name: str, shape: tuple[int, ...], seed: int, dtype, heads: int | None = None) -> np.ndarray:
    """Deterministic initial value for one parameter.

    Each parameter gets its own generator seeded from (seed, crc32(name)), so
    values do not depend on construction order.
    """
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("bias", "beta"):
        return np.zeros(shape, dtype)
    if leaf == "gamma":
        return np.ones(shape, dtype)
    if leaf == "temperature":
        return np.full(shape, 1.0 / np.sqrt(heads), dtype)
    rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
    w = rng.standard_normal(shape)
    np.clip(w, -2.0, 2.0, out=w)
    return (w / np.sqrt(_fan_in(shape))).astype(dtype)


@dataclass
class WeatherRemoverModel:
    config: ModelConfig
    params: ParamStore

    def __call__(self, image: Tensor) -> Tensor:
        return forward(self.params, image, self.config)

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.items()))[1].data.dtype

    def num_params(self) -> int:
        return self.params.count()


def init_params(config: ModelConfig, seed: int = 0, precision="f32", zero_head: bool = True) -> WeatherRemoverModel:
    dtype = resolve_dtype(precision)
    dh = {}
    for prefix, spec, _ in stage_plan(config):
        dh[prefix] = spec.width // spec.heads
    store = ParamStore()
    for name, shape in param_shapes(config):
        head_dim = None
        if name.endswith(".temperature"):
            head_dim = dh[name.split(".msa.")[0].rsplit(".", 1)[0]]
        value = init_value(name, shape, seed, dtype, head_dim)
        if zero_head and name.startswith("head."):
            value = np.zeros(shape, dtype)
        store.add(name, value)
    return WeatherRemoverModel(config, store)


# ------------------------------------------------------------------ forward

def _resample_conv(x: Tensor, p: ParamView, name: str) -> Tensor:
    w = p[name + ".weight"]
    if w.ndim == 2:
        return T.conv2d_1x1(x, w, p[name + ".bias"])
    return T.conv2d_3x3(x, w, p[name + ".bias"])


def embed(image: Tensor, p: ParamView) -> Tensor:
    return T.conv2d_3x3(image, p["embed.weight"], p["embed.bias"])


def downsample(x: Tensor, p: ParamView, name: str) -> Tensor:
    """Halve the channels with a conv, then fold 2x2 pixels into channels."""
    return T.pixel_unshuffle(_resample_conv(x, p, name), 2)


def upsample(x: Tensor, p: ParamView, name: str) -> Tensor:
    """Double the channels with a conv, then unfold into 2x2 pixels."""
    return T.pixel_shuffle(_resample_conv(x, p, name), 2)


def run_chain(x: Tensor, p: ParamView, prefix: str, spec: BlockSpec, count: int) -> Tensor:
    for i in range(count):
        x = mspvt_block(x, p.view(f"{prefix}.{i}"), spec)
    return x


def gated_chain(x: Tensor, p: ParamView, stage: str, spec: BlockSpec, count: int, gated: bool) -> Tensor:
    """gelu(P_m(x)) * P_b(x) when gated, else P_m(x)."""
    main = run_chain(x, p, f"{stage}.main", spec, count)
    if not gated:
        return main
    gate = run_chain(x, p, f"{stage}.gate", spec, 1)
    return T.mul(T.gelu(main), gate)


def d_stage(x: Tensor, p: ParamView, config: ModelConfig, k: int) -> tuple[Tensor, Tensor]:
    """Encoder stage k (1-based): returns (downsampled output, skip features)."""
    spec = block_spec(config, config.enc_widths[k - 1], config.enc_heads[k - 1])
    skip = gated_chain(x, p, f"enc{k}", spec, config.enc_blocks[k - 1], config.gate_dstage)
    return downsample(skip, p, f"down{k}"), skip


def u_stage(x: Tensor, skip: Tensor, p: ParamView, config: ModelConfig, k: int) -> Tensor:
    """Decoder stage k (1-based): upsample, fuse with the skip, run the chain."""
    x = upsample(x, p, f"up{k}")
    if x.shape != skip.shape:
        raise ShapeError(f"decoder stage {k}: {x.shape} does not match skip {skip.shape}")
    fused = T.conv2d_1x1(T.concat_channels([x, skip]), p[f"fuse{k}.weight"], p[f"fuse{k}.bias"])
    spec = block_spec(config, config.dec_widths[k - 1], config.dec_heads[k - 1])
    return gated_chain(fused, p, f"dec{k}", spec, config.dec_blocks[k - 1], config.decoder_gating)


def check_input(image: Tensor, config: ModelConfig) -> None:
    if image.ndim != 4 or image.shape[1] != config.in_channels:
        raise ShapeError(f"expected a (B, {config.in_channels}, H, W) image, got {image.shape}")
    H, W = image.shape[2:]
    if H % 8 or W % 8 or H == 0 or W == 0:
        raise ShapeError(f"image height and width must be positive multiples of 8, got {H}x{W}")


def forward(params: ParamStore, image: Tensor, config: ModelConfig) -> Tensor:
    """Restore a (B, 3, H, W) image; H and W must be multiples of 8."""
    check_input(image, config)
    p = params.view("")
    x = embed(image, p)
    skips = []
    for k in (1, 2, 3):
        x, skip = d_stage(x, p, config, k)
        skips.append(skip)
    x = run_chain(x, p, "bottleneck", block_spec(config, config.latent_width, config.bottleneck_heads),
                  config.bottleneck_blocks)
    for k in (1, 2, 3):
        x = u_stage(x, skips[3 - k], p, config, k)
    x = run_chain(x, p, "refine", block_spec(config, config.base_dim, config.refine_heads),
                  config.refine_blocks)
    residual = T.conv2d_3x3(x, p["head.weight"], p["head.bias"])
    return T.add(image, residual)


def pad_to_multiple(image: np.ndarray, multiple: int = 8) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad H and W up to a multiple; returns the padded array and the original size."""
    H, W = image.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph == 0 and pw == 0:
        return image, (H, W)
    mode = "reflect" if (ph < H and pw < W) else "edge"
    pad = [(0, 0)] * (image.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(image, pad, mode=mode), (H, W)


def restore(model: WeatherRemoverModel, image: np.ndarray, pad: bool = False) -> np.ndarray:
    """Run the model on a numpy (B, 3, H, W) array outside any tape."""
    size = None
    x = np.asarray(image, dtype=model.dtype)
    if pad:
        x, size = pad_to_multiple(x)
    out = model(Tensor(x)).data
    if size is not None:
        out = out[..., : size[0], : size[1]]
    return out
