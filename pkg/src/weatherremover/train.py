"""Adam training loop with cosine learning-rate decay and exact resume.

A run directory holds::

    manifest.txt   resolved model and run config
    model.wrmv     latest parameters
    state.wrms     optimizer moments and step counter
    metrics.tsv    iter<TAB>loss<TAB>lr, one line per iteration
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import load_params, load_state, save_params, save_state
from .config import ModelConfig, format_fields, parse_kv_text, parse_value
from .data import BatchSampler, DegradationSpec, PairedDataset
from .errors import ConfigError, FormatError
from .metrics import psnr, pseudo_huber, ssim
from .model import WeatherRemoverModel, init_params
from .params import ParamStore
from .tensor import Tape, Tensor


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = ""
    out_dir: str = "run"
    seed: int = 0
    iterations: int = 200
    lr_initial: float = 3e-4
    lr_final: float = 1e-6
    lr_decay: str = "cosine"
    batch: int = 4
    crop: int = 32
    schedule: str = ""
    precision: str = "f32"
    checkpoint_every: int = 50
    loss_c: float = 0.03
    grad_clip: float = 1.0
    degradation: str = "rain-streak"
    intensity: float = 0.5

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.lr_decay not in ("cosine", "constant"):
            raise ConfigError("lr_decay must be 'cosine' or 'constant'")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be f32 or f64")
        if self.batch <= 0 or self.crop <= 0 or self.crop % 8:
            raise ConfigError("batch must be positive and crop a positive multiple of 8")
        if self.checkpoint_every <= 0:
            raise ConfigError("checkpoint_every must be positive")
        self.stages()

    def stages(self) -> list[tuple[int, int, int]]:
        """Progressive schedule as (start_iter, batch, crop), sorted, starting at 0."""
        out = [(0, self.batch, self.crop)]
        if self.schedule.strip():
            try:
                for item in self.schedule.split(","):
                    s, b, c = (int(v) for v in item.strip().split(":"))
                    if b <= 0 or c <= 0 or c % 8:
                        raise ValueError(item)
                    out.append((s, b, c))
            except ValueError as e:
                raise ConfigError(f"bad schedule entry {e}; expected start:batch:crop") from None
        out.sort(key=lambda t: t[0])
        return out

    def stage_at(self, it: int) -> tuple[int, int]:
        b, c = self.batch, self.crop
        for s, sb, sc in self.stages():
            if it >= s:
                b, c = sb, sc
        return b, c

    def lr_at(self, it: int) -> float:
        if self.lr_decay == "constant" or self.iterations <= 1:
            return self.lr_initial
        frac = it / (self.iterations - 1)
        return self.lr_final + 0.5 * (self.lr_initial - self.lr_final) * (1.0 + math.cos(math.pi * frac))

    def to_text(self) -> str:
        return format_fields(self)


def split_config_text(text: str, overrides: dict[str, str] | None = None,
                      model_base: ModelConfig | None = None,
                      run_base: RunConfig | None = None) -> tuple[ModelConfig, RunConfig]:
    """Parse one flat config (plus overrides) into model and run configs."""
    values = parse_kv_text(text) if text else {}
    values.update(overrides or {})
    mkeys = {f.name: f for f in fields(ModelConfig)}
    rkeys = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(mkeys) - set(rkeys))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    model = ModelConfig.from_mapping({k: v for k, v in values.items() if k in mkeys}, model_base)
    rparsed = {k: parse_value(rkeys[k].type, v, k) for k, v in values.items() if k in rkeys}
    run = RunConfig(**{**(vars(run_base) if run_base else {}), **rparsed})
    return model, run


# --------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params, self.beta1, self.beta2, self.eps = params, beta1, beta2, eps
        self.step = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def update(self, lr: float, clip: float = 0.0) -> float:
        """Apply one step from the accumulated grads; returns the global grad norm."""
        grads = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self.params.items()}
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
        scale = clip / norm if clip > 0 and norm > clip else 1.0
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for n, t in self.params.items():
            g = grads[n] * scale if scale != 1.0 else grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            t.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        out = [("step", np.array([self.step], dtype=np.float64))]
        out += [(f"m.{n}", a) for n, a in self.m.items()]
        out += [(f"v.{n}", a) for n, a in self.v.items()]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        try:
            self.step = int(arrays["step"][0])
            for n in self.m:
                for key, store in (("m", self.m), ("v", self.v)):
                    a = arrays[f"{key}.{n}"]
                    if a.shape != store[n].shape or a.dtype != store[n].dtype:
                        raise FormatError(f"optimizer state for {n} does not match the model")
                    store[n] = a.copy()
        except KeyError as e:
            raise FormatError(f"optimizer state is missing {e.args[0]}") from None


# -------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: WeatherRemoverModel
    losses: list[float]
    lrs: list[float]
    out_dir: Path | None


def loss_and_grad(model: WeatherRemoverModel, degraded: np.ndarray, clean: np.ndarray, c: float) -> float:
    dtype = model.dtype
    model.params.zero_grad()
    with Tape() as tape:
        restored = model(Tensor(degraded.astype(dtype)))
        loss = pseudo_huber(Tensor(clean.astype(dtype)), restored, c)
        tape.backward(loss)
    return float(loss.data)


def _dataset(run: RunConfig) -> PairedDataset:
    if not run.data_dir:
        raise ConfigError("data_dir is required for training")
    try:
        return PairedDataset(run.data_dir, DegradationSpec(kind=run.degradation, intensity=run.intensity))
    except ValueError as e:
        raise ConfigError(str(e)) from e


def write_manifest(out: Path, model_cfg: ModelConfig, run: RunConfig, extra: dict | None = None) -> None:
    lines = ["# model"] + model_cfg.to_text().splitlines() + ["# run"] + run.to_text().splitlines()
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def train(model_cfg: ModelConfig, run: RunConfig, *, resume: bool = False, write: bool = True,
          dataset: PairedDataset | None = None,
          progress: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Train for ``run.iterations`` steps; with ``resume`` continue from the run dir."""
    ds = dataset or _dataset(run)
    sampler = BatchSampler(ds, run.batch, run.crop, run.seed)
    out = Path(run.out_dir) if write else None
    losses: list[float] = []
    lrs: list[float] = []
    if resume:
        if out is None:
            raise ConfigError("resume needs a run directory")
        model = load_params(out / "model.wrmv", expect=model_cfg)
        opt = Adam(model.params)
        _, arrays = load_state(out / "state.wrms")
        opt.load_arrays(arrays)
        start = opt.step
        log_path = out / "metrics.tsv"
        kept = log_path.read_text().splitlines()[:start] if log_path.exists() else []
        for line in kept:
            _, l, r = line.split("\t")
            losses.append(float(l))
            lrs.append(float(r))
        log_path.write_text("".join(line + "\n" for line in kept))
    else:
        model = init_params(model_cfg, run.seed, run.precision)
        opt = Adam(model.params)
        start = 0
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            (out / "metrics.tsv").write_text("")
    if out is not None:
        write_manifest(out, model_cfg, run, {"resumed_from": start} if resume else None)
    log = open(out / "metrics.tsv", "a") if out is not None else None
    try:
        for it in range(start, run.iterations):
            batch, crop = run.stage_at(it)
            degraded, clean = sampler(it, batch, crop)
            loss = loss_and_grad(model, degraded, clean, run.loss_c)
            lr = run.lr_at(it)
            opt.update(lr, run.grad_clip)
            losses.append(loss)
            lrs.append(lr)
            if log is not None:
                log.write(f"{it}\t{loss!r}\t{lr!r}\n")
            if progress is not None:
                progress(it, loss, lr)
            done = it + 1
            if out is not None and (done % run.checkpoint_every == 0 or done == run.iterations):
                log.flush()
                save_params(model, out / "model.wrmv")
                save_state(out / "state.wrms", run.to_text(), opt.state_arrays())
    finally:
        if log is not None:
            log.close()
    return TrainResult(model, losses, lrs, out)


def evaluate(model: WeatherRemoverModel, pairs) -> dict[str, float]:
    """Mean PSNR/SSIM of restored and of degraded inputs over (degraded, clean) pairs."""
    rp, dp, rs, ds_ = [], [], [], []
    for degraded, clean in pairs:
        restored = np.clip(model(Tensor(degraded.astype(model.dtype))).data, 0.0, 1.0)
        rp.append(psnr(restored, clean))
        dp.append(psnr(degraded, clean))
        if min(clean.shape[-2:]) >= 11:
            rs.append(ssim(restored, clean))
            ds_.append(ssim(degraded, clean))
    out = {"psnr_restored": float(np.mean(rp)), "psnr_degraded": float(np.mean(dp))}
    if rs:
        out["ssim_restored"] = float(np.mean(rs))
        out["ssim_degraded"] = float(np.mean(ds_))
    return out
