"""Central finite-difference checks for every primitive and composed block.

Each check reduces the op output(s) to a scalar with a fixed random
projection, then compares the tape gradient with central differences.  The
reported error is normwise: max |analytic - numeric| / max |numeric| over the
checked coordinates of all inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .blocks import BlockSpec, block_param_shapes, gfn_forward, linear_sra, msa_forward, mspvt_block
from .config import ModelConfig
from .metrics import pseudo_huber
from .model import d_stage, forward, init_params, u_stage
from .params import ParamStore
from .tensor import Tape, Tensor

DEFAULT_STEP = 1e-6
DEFAULT_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    coords: int
    tol: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


def _as_list(out) -> list[Tensor]:
    return list(out) if isinstance(out, (list, tuple)) else [out]


def check_function(name: str, fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], *, seed: int = 0,
                   step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL, max_coords: int = 120,
                   wrt: Sequence[int] | None = None) -> CheckResult:
    """Check d/d(arrays[i]) of sum(fn(*arrays) * R) for every i in ``wrt``."""
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    wrt = range(len(arrays)) if wrt is None else wrt
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        outs = _as_list(fn(*ts))
        projs = [rng.standard_normal(o.shape) for o in outs]
        loss = None
        for o, r in zip(outs, projs):
            term = T.sum_all(T.mul(o, Tensor(r)))
            loss = term if loss is None else T.add(loss, term)
        tape.backward(loss)

    def value(vals):
        outs = _as_list(fn(*[Tensor(v) for v in vals]))
        return sum(float(np.sum(o.data * r)) for o, r in zip(outs, projs))

    worst_abs, scale, count = 0.0, 0.0, 0
    for i in wrt:
        a = arrays[i]
        g = ts[i].grad if ts[i].grad is not None else np.zeros_like(a)
        flat = np.arange(a.size)
        if a.size > max_coords:
            flat = rng.choice(a.size, size=max_coords, replace=False)
        for k in flat:
            idx = np.unravel_index(k, a.shape)
            vals = [v.copy() for v in arrays]
            vals[i][idx] += step
            up = value(vals)
            vals[i][idx] -= 2 * step
            down = value(vals)
            num = (up - down) / (2 * step)
            worst_abs = max(worst_abs, abs(num - g[idx]))
            scale = max(scale, abs(num))
            count += 1
    err = worst_abs / scale if scale > 0 else (0.0 if worst_abs == 0 else float("inf"))
    return CheckResult(name, err, count, tol)


def check_params_directional(name: str, loss_fn: Callable[[], Tensor], params: ParamStore, *,
                             seed: int = 0, step: float = DEFAULT_STEP, tol: float = DEFAULT_TOL,
                             extra: Sequence[Tensor] = ()) -> CheckResult:
    """One random-direction derivative per parameter tensor (and per extra input)."""
    rng = np.random.default_rng(seed)
    leaves = [t for _, t in params.items()] + list(extra)
    for t in leaves:
        t.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    worst_abs, scale = 0.0, 0.0
    for t in leaves:
        u = rng.standard_normal(t.shape)
        g = t.grad if t.grad is not None else np.zeros(t.shape)
        analytic = float(np.vdot(g, u))
        base = t.data.copy()
        t.data = base + step * u
        up = float(loss_fn().data)
        t.data = base - step * u
        down = float(loss_fn().data)
        t.data = base
        num = (up - down) / (2 * step)
        worst_abs = max(worst_abs, abs(num - analytic))
        scale = max(scale, abs(num))
    err = worst_abs / scale if scale > 0 else float("inf")
    return CheckResult(name, err, len(leaves), tol)


# ------------------------------------------------------------------ suite

def _block_params(spec: BlockSpec, rng, prefix: str = "b") -> ParamStore:
    store = ParamStore()
    for name, shape in block_param_shapes(spec):
        scale = 1.0 if name.endswith(("gamma", "temperature")) else 0.5
        base = 1.0 if name.endswith("gamma") else 0.0
        store.add(f"{prefix}.{name}", base + scale * rng.standard_normal(shape))
    return store


def _primitive_checks(rng, step, tol) -> list[CheckResult]:
    n = rng.standard_normal
    c = lambda name, fn, arrays, **kw: check_function(name, fn, arrays, seed=len(name), step=step,
                                                      tol=tol, **kw)
    out = [
        c("conv2d_1x1", T.conv2d_1x1, [n((2, 3, 4, 5)), n((4, 3)), n(4)]),
        c("conv2d_dw3x3", T.conv2d_dw3x3, [n((2, 3, 5, 4)), n((3, 3, 3)), n(3)]),
        c("conv2d_3x3", T.conv2d_3x3, [n((2, 2, 5, 4)), n((3, 2, 3, 3)), n(3)]),
        c("adaptive_avg_pool", lambda x: T.adaptive_avg_pool(x, 3), [n((2, 3, 7, 5))]),
        c("layer_norm", T.layer_norm, [n((2, 4, 3, 3)), 1 + n(4), n(4)]),
        c("gelu", T.gelu, [2 * n((2, 3, 4, 4))]),
        c("softmax_lastdim", T.softmax_lastdim, [n((2, 3, 4, 5))]),
        c("add", T.add, [n((2, 3, 4, 4)), n((1, 3, 1, 1))]),
        c("mul", T.mul, [n((2, 3, 4, 4)), n((1, 3, 1, 4))]),
        c("scale", lambda x: T.scale(x, 0.7), [n((2, 3, 2, 2))]),
        c("matmul_batched", T.matmul_batched, [n((2, 3, 4, 5)), n((2, 3, 5, 2))]),
        c("concat_channels", lambda a, b: T.concat_channels([a, b]), [n((2, 2, 3, 3)), n((2, 3, 3, 3))]),
        c("split_channels", lambda x: T.split_channels(x, [1, 3]), [n((2, 4, 3, 3))]),
        c("repeat_channels", lambda x: T.repeat_channels(x, 2), [n((2, 3, 3, 3))]),
        c("reshape", lambda x: T.reshape(x, (2, 6, 4, 2)), [n((2, 3, 4, 4))]),
        c("transpose", lambda x: T.transpose(x, (0, 1, 3, 2)), [n((2, 3, 4, 5))]),
        c("pixel_unshuffle", lambda x: T.pixel_unshuffle(x, 2), [n((2, 3, 4, 6))]),
        c("pixel_shuffle", lambda x: T.pixel_shuffle(x, 2), [n((2, 8, 3, 2))]),
        c("sum_all", T.sum_all, [n((2, 3, 2, 2))]),
        c("pseudo_huber", lambda y, i: pseudo_huber(y, i, 0.03), [n((2, 3, 4, 4)), n((2, 3, 4, 4))]),
    ]
    return out


def _block_checks(rng, step, tol) -> list[CheckResult]:
    out = []
    for style in ("pw-dw", "pw", "dw", "dw-pw"):
        spec = BlockSpec(width=8, heads=2, hidden=16, sra_size=3, qkv_style=style)
        p = _block_params(spec, rng)
        xt = Tensor(rng.standard_normal((1, 8, 4, 4)), requires_grad=True)
        proj = Tensor(rng.standard_normal((1, 8, 4, 4)))

        def loss(p=p, spec=spec, xt=xt, proj=proj):
            return T.sum_all(T.mul(msa_forward(xt, p.view("b.msa"), spec), proj))

        out.append(check_params_directional(f"msa[{style}]", loss, p, seed=3, step=step, tol=tol, extra=[xt]))
    spec = BlockSpec(width=8, heads=2, hidden=16, sra_size=3)
    p = _block_params(spec, rng)
    x = rng.standard_normal((1, 8, 4, 4))
    out.append(check_function("linear_sra", lambda t: linear_sra(t, p.view("b.msa"), 3), [x], step=step, tol=tol))
    for gated in (True, False):
        out.append(check_function(f"gfn[gated={gated}]", lambda t: gfn_forward(t, p.view("b.gfn"), gated), [x],
                                  step=step, tol=tol))
    out.append(check_function("mspvt_block[input]", lambda t: mspvt_block(t, p.view("b"), spec), [x],
                              step=step, tol=tol))
    nosra = BlockSpec(width=8, heads=2, hidden=16, use_sra=False, learn_temperature=False)
    q = _block_params(nosra, rng)
    out.append(check_function("mspvt_block[no-sra]", lambda t: mspvt_block(t, q.view("b"), nosra), [x],
                              step=step, tol=tol))
    return out


def tiny_gradcheck_config() -> ModelConfig:
    return ModelConfig.tiny(enc_blocks=(1, 1, 1), bottleneck_blocks=1, dec_blocks=(1, 1, 1), refine_blocks=1)


def _model_checks(config: ModelConfig, seed: int, step, tol) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    model = init_params(config, seed, "f64", zero_head=False)
    image = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)), requires_grad=True)
    target = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    loss = lambda: pseudo_huber(target, forward(model.params, image, config), 0.03)
    out = [check_params_directional("model[pseudo_huber, all params]", loss, model.params, seed=seed,
                                    step=step, tol=tol, extra=[image])]
    p = model.params.view("")
    D = config.base_dim
    x = rng.standard_normal((1, D, 8, 8))
    out.append(check_function("d_stage[input]", lambda t: list(d_stage(t, p, config, 1)), [x], step=step, tol=tol))
    f = rng.standard_normal((1, 8 * D, 1, 1))
    s = rng.standard_normal((1, 4 * D, 2, 2))
    out.append(check_function("u_stage[inputs]", lambda a, b: u_stage(a, b, p, config, 1), [f, s],
                              step=step, tol=tol))
    return out


def run_suite(config: ModelConfig | None = None, seed: int = 0, step: float = DEFAULT_STEP,
              tol: float = DEFAULT_TOL) -> list[CheckResult]:
    """Every primitive, every composed block, and a full model loss (double precision)."""
    config = config or tiny_gradcheck_config()
    rng = np.random.default_rng(seed)
    return _primitive_checks(rng, step, tol) + _block_checks(rng, step, tol) + _model_checks(config, seed, step, tol)


def format_report(results: Sequence[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'max_rel_error':>13}  {'coords':>6}  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {r.coords:6d}  {'PASS' if r.passed else 'FAIL'}")
    bad = sum(not r.passed for r in results)
    lines.append(f"{len(results) - bad}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
