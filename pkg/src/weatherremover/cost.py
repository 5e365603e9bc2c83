"""Closed-form parameter, MAC and activation accounting, and calibration.

Nothing here touches tensors: every figure is computed from the config with
explicit formulas, so the census can be cross-checked against a constructed
ParamStore.

MAC conventions
---------------
``conv-only``
    Convolutions only (what hook-based profilers count): a dense conv costs
    Cout*Cin*K*K per output pixel, a depthwise conv C*K*K per output pixel.
    Biases are free.
``full``
    Convolutions plus the attention matmuls (N*M*C each for scores and
    aggregation), and one MAC per output scalar for LayerNorm, GELU, softmax,
    pooling, scaling, gating products and residual adds.

Rows that operate on the pooled P x P key/value map do not depend on the
image size, so total MACs are affine in H*W with a small positive intercept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .config import ModelConfig
from .errors import CalibrationError, ConfigError

CONVENTIONS = ("conv-only", "full")

# Table 4 totals in units of parameters.
TABLE4_TARGETS = {
    "both": 24.32e6,
    "gfn_only": 23.76e6,
    "dstage_only": 20.56e6,
    "neither": 20.10e6,
}
GATE_VARIANTS = {
    "both": dict(gate_gfn=True, gate_dstage=True),
    "gfn_only": dict(gate_gfn=True, gate_dstage=False),
    "dstage_only": dict(gate_gfn=False, gate_dstage=True),
    "neither": dict(gate_gfn=False, gate_dstage=False),
}
# conv-only MACs at 1x3x720x480 from the ablation text
MAC_TARGETS = {"both": 377.21e9, "gfn_only": 356.76e9, "neither": 280.12e9}
GFN_GATE_DELTA = 3.66e6
DSTAGE_GATE_DELTA = 0.46e6


@dataclass(frozen=True)
class CostRow:
    path: str
    params: int
    macs_conv: int
    macs_full: int
    activation_bytes: int

    def macs(self, convention: str) -> int:
        return self.macs_conv if convention == "conv-only" else self.macs_full


@dataclass
class CostReport:
    config: ModelConfig
    rows: list[CostRow]
    height: int | None = None
    width: int | None = None
    batch: int = 1
    convention: str = "conv-only"
    activation_peak_bytes: int = 0
    bytes_per_scalar: int = 4

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def macs_conv(self) -> int:
        return sum(r.macs_conv for r in self.rows)

    @property
    def macs_full(self) -> int:
        return sum(r.macs_full for r in self.rows)

    @property
    def macs(self) -> int:
        return self.macs_conv if self.convention == "conv-only" else self.macs_full

    @property
    def activation_total_bytes(self) -> int:
        return sum(r.activation_bytes for r in self.rows)

    def row(self, path: str) -> CostRow:
        for r in self.rows:
            if r.path == path:
                return r
        raise KeyError(path)

    def prefix_totals(self, prefix: str) -> CostRow:
        dotted = prefix + "."
        sel = [r for r in self.rows if r.path == prefix or r.path.startswith(dotted)]
        return CostRow(prefix, sum(r.params for r in sel), sum(r.macs_conv for r in sel),
                       sum(r.macs_full for r in sel), sum(r.activation_bytes for r in sel))

    def totals(self) -> dict:
        return {
            "params": self.params,
            "macs": self.macs,
            "macs_conv": self.macs_conv,
            "macs_full": self.macs_full,
            "activation_total_bytes": self.activation_total_bytes,
            "activation_peak_bytes": self.activation_peak_bytes,
        }

    def to_table(self, top_level: bool = False) -> str:
        """Tab-separated per-module table followed by a totals line."""
        lines = ["path\tparams\tmacs\tactivation_bytes"]
        rows = self.rows
        if top_level:
            order: list[str] = []
            for r in self.rows:
                head = _group(r.path)
                if head not in order:
                    order.append(head)
            rows = [self.prefix_totals(h) for h in order]
        for r in rows:
            lines.append(f"{r.path}\t{r.params}\t{r.macs(self.convention)}\t{r.activation_bytes}")
        lines.append(f"TOTAL\t{self.params}\t{self.macs}\t{self.activation_total_bytes}")
        return "\n".join(lines) + "\n"

    def to_structured(self) -> str:
        """JSON document with config echo, resolution, rows and totals."""
        doc = {
            "config": self.config.to_text().splitlines(),
            "resolution": None if self.height is None else [self.batch, 3, self.height, self.width],
            "macs_convention": self.convention,
            "rows": [
                {"path": r.path, "params": r.params, "macs": r.macs(self.convention),
                 "activation_bytes": r.activation_bytes}
                for r in self.rows
            ],
            "totals": self.totals(),
        }
        return json.dumps(doc, indent=2) + "\n"


def _group(path: str) -> str:
    """Top-level grouping key: 'enc1.main', 'bottleneck', 'down2', ..."""
    parts = path.split(".")
    if parts[0][:3] in ("enc", "dec") and len(parts) > 1 and parts[1] in ("main", "gate"):
        return ".".join(parts[:2])
    return parts[0]


# ------------------------------------------------------------- the builder

class _Builder:
    """Emits rows and simulates tensor liveness along the forward schedule."""

    def __init__(self, batch: int, bytes_per_scalar: int):
        self.batch = batch
        self.bps = bytes_per_scalar
        self.rows: list[CostRow] = []
        self.live: dict[int, int] = {}
        self.live_bytes = 0
        self.peak = 0
        self._next = 0

    def alloc(self, elems: int) -> int:
        h = self._next
        self._next += 1
        b = elems * self.batch * self.bps
        self.live[h] = b
        self.live_bytes += b
        self.peak = max(self.peak, self.live_bytes)
        return h

    def free(self, *handles: int) -> None:
        for h in handles:
            self.live_bytes -= self.live.pop(h)

    def op(self, path: str, out_elems: int, *, params: int = 0, conv: int = 0, extra: int = 0,
           free: Iterable[int] = ()) -> int:
        """One schedule step.  ``conv`` and ``extra`` are per-sample MACs;
        ``extra`` is counted only under the full convention."""
        B = self.batch
        self.rows.append(CostRow(path, params, conv * B, (conv + extra) * B, out_elems * B * self.bps))
        h = self.alloc(out_elems)
        self.free(*free)
        return h


def _pw(b: _Builder, path, cin, cout, n, src, free_src=False):
    return b.op(path, cout * n, params=cout * cin + cout, conv=cout * cin * n,
                free=(src,) if free_src else ())


def _dw(b: _Builder, path, c, n, src, free_src=True):
    return b.op(path, c * n, params=10 * c, conv=9 * c * n, free=(src,) if free_src else ())


def _ln(b: _Builder, path, c, n, src, free_src=False):
    return b.op(path, c * n, params=2 * c, extra=c * n, free=(src,) if free_src else ())


def _block(b: _Builder, cfg: ModelConfig, pre: str, C: int, heads: int, n: int, x: int) -> int:
    """One MS-PVT block on a live input ``x``; returns the output handle (x freed)."""
    style = cfg.qkv_style
    hid = cfg.hidden(C)
    M = cfg.sra_size ** 2 if cfg.use_sra else n
    if n == 0:
        M = 0
    a = _ln(b, f"{pre}.ln1", C, n, x)
    # queries
    if style == "pw-dw":
        q = _dw(b, f"{pre}.msa.q_d", C, n, _pw(b, f"{pre}.msa.q_p", C, C, n, a))
    elif style == "pw":
        q = _pw(b, f"{pre}.msa.q_p", C, C, n, a)
    elif style == "dw":
        q = _dw(b, f"{pre}.msa.q_d", C, n, a, free_src=False)
    else:
        q = _pw(b, f"{pre}.msa.q_p", C, C, n, _dw(b, f"{pre}.msa.q_d", C, n, a, free_src=False), True)
    # key/value source
    if cfg.use_sra:
        s = b.op(f"{pre}.msa.pool", C * M, extra=C * n, free=(a,))
        s = _pw(b, f"{pre}.msa.sra_p", C, C, M, s, True)
        s = _ln(b, f"{pre}.msa.sra_ln", C, M, s, True)
        s = b.op(f"{pre}.msa.sra_act", C * M, extra=C * M, free=(s,))
    else:
        s = a
    if style == "pw-dw":
        kv = _dw(b, f"{pre}.msa.kv_d", 2 * C, M, _pw(b, f"{pre}.msa.kv_p", C, 2 * C, M, s, True))
    elif style == "pw":
        kv = _pw(b, f"{pre}.msa.kv_p", C, 2 * C, M, s, True)
    else:
        r = b.op(f"{pre}.msa.kv_repeat", 2 * C * M, free=(s,))
        kv = _dw(b, f"{pre}.msa.kv_d", 2 * C, M, r)
        if style == "dw-pw":
            kv = _pw(b, f"{pre}.msa.kv_p", 2 * C, 2 * C, M, kv, True)
    # attention
    sc = b.op(f"{pre}.msa.scores", heads * n * M, extra=n * M * C)
    if cfg.learn_temperature:
        sc = b.op(f"{pre}.msa.temperature", heads * n * M, params=heads, extra=heads * n * M, free=(sc,))
    else:
        sc = b.op(f"{pre}.msa.scale", heads * n * M, extra=heads * n * M, free=(sc,))
    at = b.op(f"{pre}.msa.softmax", heads * n * M, extra=heads * n * M, free=(sc,))
    ctx = b.op(f"{pre}.msa.context", C * n, extra=n * M * C, free=(at, q, kv))
    m = _pw(b, f"{pre}.msa.out_p", C, C, n, ctx, True)
    y = b.op(f"{pre}.res1", C * n, extra=C * n, free=(x, m))
    # gated feed-forward
    g_in = _ln(b, f"{pre}.ln2", C, n, y)
    h1 = _dw(b, f"{pre}.gfn.b1_d", hid, n, _pw(b, f"{pre}.gfn.b1_p", C, hid, n, g_in))
    h1 = b.op(f"{pre}.gfn.act", hid * n, extra=hid * n, free=(h1,))
    if cfg.gate_gfn:
        h2 = _dw(b, f"{pre}.gfn.b2_d", hid, n, _pw(b, f"{pre}.gfn.b2_p", C, hid, n, g_in, True))
        h1 = b.op(f"{pre}.gfn.gate", hid * n, extra=hid * n, free=(h1, h2))
    else:
        b.free(g_in)
    z = _pw(b, f"{pre}.gfn.out_p", hid, C, n, h1, True)
    return b.op(f"{pre}.res2", C * n, extra=C * n, free=(y, z))


def _chain(b, cfg, prefix, C, heads, count, n, x):
    for i in range(count):
        x = _block(b, cfg, f"{prefix}.{i}", C, heads, n, x)
    return x


def _gated_stage(b, cfg, stage, C, heads, count, n, x, gated):
    if not gated:
        return _chain(b, cfg, f"{stage}.main", C, heads, count, n, x)
    keep = b.alloc(0)            # the stage input stays live for the gate branch
    main = _chain(b, cfg, f"{stage}.main", C, heads, count, n, keep)
    gate = _chain(b, cfg, f"{stage}.gate", C, heads, 1, n, x)
    act = b.op(f"{stage}.mix_act", C * n, extra=C * n, free=(main,))
    return b.op(f"{stage}.mix", C * n, extra=C * n, free=(act, gate))


def _resample(b, path, cin, cout, K, n_in, src):
    """conv (cin -> cout, kernel K) at the input resolution, then the shuffle."""
    return b.op(path, cout * n_in, params=cout * cin * K * K + cout, conv=cout * cin * K * K * n_in,
                free=(src,))


def _build(config: ModelConfig, H: int | None, W: int | None, batch: int, bytes_per_scalar: int) -> _Builder:
    b = _Builder(batch, bytes_per_scalar)
    D, K, cin = config.base_dim, config.resample_kernel, config.in_channels
    n0 = 0 if H is None else H * W
    img = b.alloc(cin * n0)
    x = b.op("embed", D * n0, params=D * cin * 9 + D, conv=D * cin * 9 * n0)
    skips = []
    n = n0
    for k, (C, heads, count) in enumerate(zip(config.enc_widths, config.enc_heads, config.enc_blocks), 1):
        s = _gated_stage(b, config, f"enc{k}", C, heads, count, n, x, config.gate_dstage)
        skips.append(s)
        d = _resample(b, f"down{k}", C, C // 2, K, n, b.alloc(0))
        n //= 4
        x = b.op(f"down{k}.shuffle", 2 * C * n, free=(d,))
    x = _chain(b, config, "bottleneck", config.latent_width, config.bottleneck_heads,
               config.bottleneck_blocks, n, x)
    prev = config.latent_width
    for k, (C, heads, count) in enumerate(zip(config.dec_widths, config.dec_heads, config.dec_blocks), 1):
        u = _resample(b, f"up{k}", prev, 2 * prev, K, n, x)
        n *= 4
        x = b.op(f"up{k}.shuffle", C * n, free=(u,))
        cat = b.op(f"fuse{k}.concat", 2 * C * n, free=(x, skips[3 - k]))
        x = _pw(b, f"fuse{k}", 2 * C, C, n, cat, True)
        x = _gated_stage(b, config, f"dec{k}", C, heads, count, n, x, config.decoder_gating)
        prev = C
    x = _chain(b, config, "refine", D, config.refine_heads, config.refine_blocks, n, x)
    r = b.op("head", cin * n0, params=cin * D * 9 + cin, conv=cin * D * 9 * n0, free=(x,))
    b.op("output", cin * n0, extra=cin * n0, free=(img, r))
    return b


def _check_resolution(H, W):
    if H is None and W is None:
        return
    if H is None or W is None or H <= 0 or W <= 0 or H % 8 or W % 8:
        raise ValueError(f"resolution must be positive multiples of 8, got {H}x{W}")


def cost_report(config: ModelConfig, H: int | None = None, W: int | None = None, *, batch: int = 1,
                convention: str = "conv-only", bytes_per_scalar: int = 4) -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    _check_resolution(H, W)
    b = _build(config, H, W, batch, bytes_per_scalar)
    return CostReport(config, b.rows, H, W, batch, convention, b.peak, bytes_per_scalar)


def count_params(config: ModelConfig) -> CostReport:
    return cost_report(config)


def count_macs(config: ModelConfig, H: int, W: int, convention: str = "conv-only", batch: int = 1) -> CostReport:
    if H is None or W is None:
        raise ValueError("count_macs needs a resolution")
    return cost_report(config, H, W, batch=batch, convention=convention)


def estimate_activation_bytes(config: ModelConfig, H: int, W: int, batch: int = 1,
                              bytes_per_scalar: int = 4) -> CostReport:
    return cost_report(config, H, W, batch=batch, bytes_per_scalar=bytes_per_scalar)


def gating_deltas(config: ModelConfig) -> dict[str, int]:
    """Parameters each gate adds on top of the model with neither gate."""
    p = {k: count_params(config.replace(**v)).params for k, v in GATE_VARIANTS.items()}
    return {"gfn_gating": p["gfn_only"] - p["neither"], "dstage_gating": p["dstage_only"] - p["neither"]}


def param_module(name: str) -> str:
    """Map a ParamStore name to the cost row that accounts for it."""
    head, _, leaf = name.rpartition(".")
    if leaf in ("weight", "bias", "gamma", "beta"):
        return head
    return name


def sra_intercept_macs(config: ModelConfig) -> int:
    """Conv MACs that do not depend on resolution (pooled-map convolutions)."""
    if not config.use_sra:
        return 0
    M = config.sra_size ** 2
    total = 0
    for C, count in _block_census(config):
        per = C * C                       # sra_p
        if config.qkv_style in ("pw-dw", "pw"):
            per += 2 * C * C
        if config.qkv_style in ("pw-dw", "dw", "dw-pw"):
            per += 18 * C
        if config.qkv_style == "dw-pw":
            per += 4 * C * C
        total += count * per * M
    return total


def _block_census(config: ModelConfig) -> list[tuple[int, int]]:
    out = []
    for C, n in zip(config.enc_widths, config.enc_blocks):
        out.append((C, n + (1 if config.gate_dstage else 0)))
    out.append((config.latent_width, config.bottleneck_blocks))
    for C, n in zip(config.dec_widths, config.dec_blocks):
        out.append((C, n + (1 if config.decoder_gating else 0)))
    out.append((config.base_dim, config.refine_blocks))
    return out


def gfn_cost(width: int, H: int, W: int, gamma=Fraction(2), gated: bool = True) -> tuple[int, int]:
    """(params, conv-only MACs) of a single GFN of the given width at H x W."""
    hid = int(width * Fraction(gamma))
    branches = 2 if gated else 1
    params = branches * (hid * width + hid + 10 * hid) + width * hid + width
    macs = (branches * (hid * width + 9 * hid) + width * hid) * H * W
    return params, macs


# ------------------------------------------------------------- calibration

@dataclass
class CalibrationResult:
    config: ModelConfig
    predicted: dict[str, int]
    targets: dict[str, float]
    residuals: dict[str, float]
    max_residual: float
    feasible: bool
    table: list[tuple[dict, float]] = field(default_factory=list)

    @property
    def base_dim(self) -> int:
        return self.config.base_dim

    @property
    def gamma(self) -> Fraction:
        return self.config.gfn_expansion

    @property
    def decoder_gating(self) -> bool:
        return self.config.decoder_gating

    def residual_table(self) -> str:
        lines = ["variant\tpredicted\ttarget\trelative_residual"]
        for k in self.targets:
            lines.append(f"{k}\t{self.predicted[k]}\t{self.targets[k]:.0f}\t{self.residuals[k]:+.5f}")
        return "\n".join(lines) + "\n"


def _fast_params(config: ModelConfig) -> int:
    return count_params(config).params


def calibrate(targets: dict[str, float] | None = None,
              dims: Sequence[int] = tuple(range(32, 65, 4)),
              gammas: Sequence = (Fraction(1), Fraction(4, 3), Fraction(2), Fraction(8, 3)),
              decoder_gating: Sequence[bool] = (False, True),
              resample_kernels: Sequence[int] = (1, 3),
              base: ModelConfig | None = None,
              tolerance: float = 0.05) -> CalibrationResult:
    """Grid search over unstated hyperparameters against gate-variant totals.

    Candidates whose head counts do not divide the stage widths are skipped.
    The winner minimises the maximum relative residual; ties keep the earlier
    candidate in grid order.
    """
    targets = dict(TABLE4_TARGETS if targets is None else targets)
    if not targets or any(v <= 0 for v in targets.values()):
        raise ValueError("calibration targets must be positive")
    unknown = set(targets) - set(GATE_VARIANTS)
    if unknown:
        raise ValueError(f"unknown target variants: {sorted(unknown)}")
    base = base or ModelConfig()
    table = []
    best = None
    for D in dims:
        for g in gammas:
            for dg in decoder_gating:
                for K in resample_kernels:
                    try:
                        cand = base.replace(base_dim=D, gfn_expansion=Fraction(g), decoder_gating=dg,
                                            resample_kernel=K)
                    except ConfigError:
                        continue
                    pred = {k: _fast_params(cand.replace(**GATE_VARIANTS[k])) for k in targets}
                    res = {k: (pred[k] - targets[k]) / targets[k] for k in targets}
                    worst = max(abs(v) for v in res.values())
                    desc = dict(base_dim=D, gfn_expansion=str(Fraction(g)), decoder_gating=dg,
                                resample_kernel=K)
                    table.append((desc, worst))
                    if best is None or worst < best[0]:
                        best = (worst, cand, pred, res)
    if best is None:
        raise CalibrationError("no candidate in the search space is a valid configuration", [])
    worst, cand, pred, res = best
    table.sort(key=lambda t: t[1])
    result = CalibrationResult(cand, pred, targets, res, worst, worst <= tolerance, table)
    if not result.feasible:
        raise CalibrationError(
            f"best candidate misses the targets by {worst:.2%} (> {tolerance:.0%})\n"
            + result.residual_table(), table)
    return result
