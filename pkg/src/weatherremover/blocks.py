"""MS-PVT building blocks: linear SRA, multi-scale attention, gated FFN.

Parameters are read from a :class:`~weatherremover.params.ParamView` whose keys
follow the layout produced by :func:`block_param_shapes`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class BlockSpec:
    """Static shape information for one MS-PVT block."""

    width: int
    heads: int
    hidden: int
    sra_size: int = 7
    gate_gfn: bool = True
    qkv_style: str = "pw-dw"
    use_sra: bool = True
    learn_temperature: bool = True

    def __post_init__(self):
        if self.width % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide width {self.width}")


def block_param_shapes(spec: BlockSpec) -> list[tuple[str, tuple[int, ...]]]:
    C, h = spec.width, spec.hidden
    out = [("ln1.gamma", (C,)), ("ln1.beta", (C,))]
    msa = []
    if spec.qkv_style in ("pw-dw", "pw"):
        msa += [("q_p.weight", (C, C)), ("q_p.bias", (C,))]
    if spec.qkv_style in ("pw-dw", "dw", "dw-pw"):
        msa += [("q_d.weight", (C, 3, 3)), ("q_d.bias", (C,))]
    if spec.qkv_style == "dw-pw":
        msa += [("q_p.weight", (C, C)), ("q_p.bias", (C,))]
    if spec.use_sra:
        msa += [("sra_p.weight", (C, C)), ("sra_p.bias", (C,)),
                ("sra_ln.gamma", (C,)), ("sra_ln.beta", (C,))]
    if spec.qkv_style in ("pw-dw", "pw"):
        msa += [("kv_p.weight", (2 * C, C)), ("kv_p.bias", (2 * C,))]
    if spec.qkv_style in ("pw-dw", "dw", "dw-pw"):
        msa += [("kv_d.weight", (2 * C, 3, 3)), ("kv_d.bias", (2 * C,))]
    if spec.qkv_style == "dw-pw":
        msa += [("kv_p.weight", (2 * C, 2 * C)), ("kv_p.bias", (2 * C,))]
    msa += [("out_p.weight", (C, C)), ("out_p.bias", (C,))]
    if spec.learn_temperature:
        msa += [("temperature", (spec.heads,))]
    out += [("msa." + k, s) for k, s in msa]
    out += [("ln2.gamma", (C,)), ("ln2.beta", (C,))]
    gfn = [("b1_p.weight", (h, C)), ("b1_p.bias", (h,)), ("b1_d.weight", (h, 3, 3)), ("b1_d.bias", (h,))]
    if spec.gate_gfn:
        gfn += [("b2_p.weight", (h, C)), ("b2_p.bias", (h,)),
                ("b2_d.weight", (h, 3, 3)), ("b2_d.bias", (h,))]
    gfn += [("out_p.weight", (C, h)), ("out_p.bias", (C,))]
    out += [("gfn." + k, s) for k, s in gfn]
    return out


def _pw(x, p, name):
    return T.conv2d_1x1(x, p[name + ".weight"], p[name + ".bias"])


def _dw(x, p, name):
    return T.conv2d_dw3x3(x, p[name + ".weight"], p[name + ".bias"])


def linear_sra(x: Tensor, p, P: int) -> Tensor:
    """Pool to P x P, pointwise conv, channel LayerNorm, GELU."""
    if P <= 0:
        raise ValueError(f"SRA size must be positive, got {P}")
    pooled = T.adaptive_avg_pool(x, P)
    y = _pw(pooled, p, "sra_p")
    y = T.layer_norm(y, p["sra_ln.gamma"], p["sra_ln.beta"])
    return T.gelu(y)


def _project_q(x, p, style):
    if style == "pw-dw":
        return _dw(_pw(x, p, "q_p"), p, "q_d")
    if style == "pw":
        return _pw(x, p, "q_p")
    if style == "dw":
        return _dw(x, p, "q_d")
    return _pw(_dw(x, p, "q_d"), p, "q_p")


def _project_kv(src, p, style):
    if style == "pw-dw":
        return _dw(_pw(src, p, "kv_p"), p, "kv_d")
    if style == "pw":
        return _pw(src, p, "kv_p")
    # depthwise first: each channel feeds two outputs (channel multiplier 2)
    kv = _dw(T.repeat_channels(src, 2), p, "kv_d")
    if style == "dw":
        return kv
    return _pw(kv, p, "kv_p")


def msa_forward(x: Tensor, p, spec: BlockSpec, return_attention: bool = False):
    """Multi-scale attention: full-resolution queries attend to P*P pooled tokens."""
    B, C, H, W = x.shape
    heads = spec.heads
    if C % heads:
        raise ConfigError(f"{heads} heads do not divide {C} channels")
    dh = C // heads
    N = H * W
    q = _project_q(x, p, spec.qkv_style)
    src = linear_sra(x, p, spec.sra_size) if spec.use_sra else x
    kv = _project_kv(src, p, spec.qkv_style)
    k, v = T.split_channels(kv, [C, C])
    M = k.shape[2] * k.shape[3]
    qh = T.transpose(T.reshape(q, (B, heads, dh, N)), (0, 1, 3, 2))   # (B, h, N, dh)
    kt = T.reshape(k, (B, heads, dh, M))                                # (B, h, dh, M)
    vh = T.transpose(T.reshape(v, (B, heads, dh, M)), (0, 1, 3, 2))    # (B, h, M, dh)
    scores = T.matmul_batched(qh, kt)
    if spec.learn_temperature:
        scores = T.mul(scores, T.reshape(p["temperature"], (1, heads, 1, 1)))
    else:
        scores = T.scale(scores, 1.0 / math.sqrt(dh))
    attn = T.softmax_lastdim(scores)
    ctx = T.matmul_batched(attn, vh)                                     # (B, h, N, dh)
    ctx = T.reshape(T.transpose(ctx, (0, 1, 3, 2)), (B, C, H, W))
    out = _pw(ctx, p, "out_p")
    if return_attention:
        return out, attn
    return out


def gfn_forward(x: Tensor, p, gated: bool = True) -> Tensor:
    """Gated feed-forward: out( gelu(dw1(pw1 x)) * dw2(pw2 x) ).

    With ``gated=False`` the second branch and the product are removed.
    """
    a = T.gelu(_dw(_pw(x, p, "b1_p"), p, "b1_d"))
    if gated:
        a = T.mul(a, _dw(_pw(x, p, "b2_p"), p, "b2_d"))
    return _pw(a, p, "out_p")


def mspvt_block(x: Tensor, p, spec: BlockSpec) -> Tensor:
    """Pre-norm residual block: x + MSA(LN x), then + GFN(LN x)."""
    y = T.add(x, msa_forward(T.layer_norm(x, p["ln1.gamma"], p["ln1.beta"]), p.view("msa"), spec))
    z = gfn_forward(T.layer_norm(y, p["ln2.gamma"], p["ln2.beta"]), p.view("gfn"), spec.gate_gfn)
    return T.add(y, z)
