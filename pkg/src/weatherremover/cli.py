"""Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O or format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import cost
from .config import ModelConfig
from .errors import CalibrationError, ConfigError, FormatError, ShapeError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

QKV_VARIANTS = {"1x1-only": "pw", "depthwise-only": "dw", "swapped": "dw-pw", "canonical": "pw-dw"}
SRA_GFN_VARIANTS = {
    "neither": dict(use_sra=False, gate_gfn=False),
    "sra-only": dict(use_sra=True, gate_gfn=False),
    "gfn-only": dict(use_sra=False, gate_gfn=True),
    "both": dict(use_sra=True, gate_gfn=True),
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers

def parse_res(text: str) -> tuple[int, int]:
    """'WxH' -> (H, W)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return h, w


def parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _read_config_text(path: str | None) -> str:
    if not path:
        return ""
    try:
        return Path(path).read_text()
    except OSError as e:
        raise FormatError(f"cannot read config {path}: {e.strerror}") from e


def resolve_configs(args, model_base: ModelConfig | None = None):
    from .train import RunConfig, split_config_text

    overrides = parse_set(getattr(args, "set", None))
    for key in ("seed", "precision"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "no_gfn_gate", False):
        overrides["gate_gfn"] = "false"
    if getattr(args, "no_dstage_gate", False):
        overrides["gate_dstage"] = "false"
    return split_config_text(_read_config_text(args.config), overrides, model_base, RunConfig())


def model_config_only(args, base: ModelConfig | None = None) -> ModelConfig:
    return resolve_configs(args, base)[0]


def _emit(args, table: str, doc: dict) -> None:
    if args.format == "structured-text":
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    else:
        sys.stdout.write(table)


# ------------------------------------------------------------------ commands

def cmd_analyze(args) -> int:
    config = model_config_only(args)
    H, W = args.res
    report = cost.cost_report(config, H, W, batch=args.batch, convention=args.convention)
    if args.format == "structured-text":
        doc = json.loads(report.to_structured())
        if not args.detail:
            doc["rows"] = _grouped_rows(report)
        sys.stdout.write(json.dumps(doc, indent=2) + "\n")
        return EXIT_OK
    sys.stdout.write(report.to_table(top_level=not args.detail))
    sys.stdout.write(
        f"# resolution {args.batch}x3x{H}x{W}, convention {args.convention}\n"
        f"# params {report.params} ({report.params / 1e6:.2f} M)\n"
        f"# macs conv-only {report.macs_conv / 1e9:.2f} G, full {report.macs_full / 1e9:.2f} G\n"
        f"# activations total {report.activation_total_bytes} B, peak {report.activation_peak_bytes} B\n"
    )
    return EXIT_OK


def _grouped_rows(report: cost.CostReport) -> list[dict]:
    rows = []
    for line in report.to_table(top_level=True).splitlines()[1:-1]:
        path, p, m, a = line.split("\t")
        rows.append({"path": path, "params": int(p), "macs": int(m), "activation_bytes": int(a)})
    return rows


def cmd_calibrate(args) -> int:
    base = model_config_only(args)
    try:
        result = cost.calibrate(base=base)
    except CalibrationError as e:
        sys.stderr.write(f"calibration failed: {e}\n")
        return EXIT_VERIFY
    c = result.config
    deltas = cost.gating_deltas(c)
    table = (f"base_dim\t{c.base_dim}\ngfn_expansion\t{c.gfn_expansion}\n"
             f"decoder_gating\t{str(c.decoder_gating).lower()}\nresample_kernel\t{c.resample_kernel}\n"
             f"max_residual\t{result.max_residual:.5f}\n" + result.residual_table()
             + "".join(f"delta_{k}\t{v}\n" for k, v in deltas.items()))
    doc = {"config": c.to_text().splitlines(), "predicted": result.predicted, "targets": result.targets,
           "residuals": result.residuals, "max_residual": result.max_residual, "feasible": result.feasible,
           "deltas": deltas}
    _emit(args, table, doc)
    return EXIT_OK


def ablation_grid(base: ModelConfig, grid: str) -> list[tuple[str, str, dict]]:
    out = []
    if grid in ("gating", "all"):
        out += [("gating", k, v) for k, v in cost.GATE_VARIANTS.items()]
    if grid in ("qkv", "all"):
        out += [("qkv", k, dict(qkv_style=v)) for k, v in QKV_VARIANTS.items()]
    if grid in ("sra-gfn", "all"):
        out += [("sra-gfn", k, v) for k, v in SRA_GFN_VARIANTS.items()]
    return out


def cmd_ablate(args) -> int:
    base, run = resolve_configs(args)
    H, W = args.res
    grid = ablation_grid(base, args.grid)
    toy = None
    if args.train:
        if not args.data or not args.held:
            raise UsageError("--train needs --data and --held")
        toy = _toy_trainer(args, run)
    rows = []
    for group, name, changes in grid:
        cfg = base.replace(**changes)
        rep_c = cost.cost_report(cfg, H, W, convention="conv-only")
        rep_f = cost.cost_report(cfg, H, W, convention="full")
        row = {"grid": group, "variant": name, "params": rep_c.params, "macs_conv": rep_c.macs_conv,
               "macs_full": rep_f.macs_full}
        if toy is not None:
            row.update(toy(changes))
        rows.append(row)
    keys = list(rows[0]) if rows else []
    table = "\t".join(keys) + "\n" + "".join(
        "\t".join(_fmt(r[k]) for k in keys) + "\n" for r in rows)
    _emit(args, table, {"resolution": [1, 3, H, W], "rows": rows})
    return EXIT_OK


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def _toy_trainer(args, run):
    from .data import PairedDataset, dataset_iter
    from .train import train, evaluate

    train_ds = PairedDataset(args.data)
    held = list(dataset_iter(args.held, 1, None, 0))
    tiny = ModelConfig.tiny()

    def run_variant(changes):
        cfg = tiny.replace(**changes)
        r = run.__class__(**{**vars(run), "iterations": args.iterations})
        result = train(cfg, r, write=False, dataset=train_ds)
        ev = evaluate(result.model, held)
        return {"toy_psnr": ev["psnr_restored"], "toy_ssim": ev.get("ssim_restored", float("nan"))}

    return run_variant


def cmd_train(args) -> int:
    from .train import train, evaluate
    from .data import dataset_iter

    model_cfg, run = resolve_configs(args)
    changes = {}
    if args.data:
        changes["data_dir"] = args.data
    if args.out:
        changes["out_dir"] = args.out
    if args.iterations is not None:
        changes["iterations"] = args.iterations
    run = run.__class__(**{**vars(run), **changes})
    if not run.data_dir:
        raise UsageError("train needs --data (or data_dir in the config)")

    def progress(it, loss, lr):
        if args.verbose and (it % 10 == 0 or it == run.iterations - 1):
            sys.stderr.write(f"iter {it}\tloss {loss:.6f}\tlr {lr:.3e}\n")

    result = train(model_cfg, run, resume=args.resume, progress=progress)
    summary = {"iterations": run.iterations, "out_dir": str(result.out_dir)}
    if result.losses:
        summary.update(initial_loss=result.losses[0], final_loss=result.losses[-1])
    if args.held:
        summary.update(evaluate(result.model, dataset_iter(args.held, 1, None, 0)))
    table = "".join(f"{k}\t{_fmt(v)}\n" for k, v in summary.items())
    _emit(args, table, summary)
    return EXIT_OK


def _input_files(inp: Path) -> tuple[list[Path], Path | None]:
    from .imageio import list_images

    if inp.is_file():
        return [inp], None
    if (inp / "degraded").is_dir():
        clean = inp / "clean" if (inp / "clean").is_dir() else None
        return list_images(inp / "degraded"), clean
    files = list_images(inp)
    if not files:
        raise FormatError(f"no images under {inp}")
    return files, None


def cmd_infer(args) -> int:
    from .checkpoint import load_params
    from .imageio import load_image, save_image
    from .metrics import psnr, ssim
    from .model import restore

    model = load_params(args.checkpoint)
    files, clean_dir = _input_files(Path(args.input))
    if args.clean:
        clean_dir = Path(args.clean)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for f in files:
        img = load_image(f)
        restored = np.clip(restore(model, img, pad=args.pad), 0.0, 1.0)
        save_image(restored, out / f.name)
        row = {"image": f.name}
        if clean_dir is not None and (clean_dir / f.name).exists():
            ref = load_image(clean_dir / f.name)
            row.update(psnr_restored=psnr(restored, ref), psnr_degraded=psnr(img, ref))
            if min(ref.shape[-2:]) >= 11:
                row.update(ssim_restored=ssim(restored, ref), ssim_degraded=ssim(img, ref))
        rows.append(row)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    means = {k: float(np.mean([r[k] for r in rows if k in r])) for k in keys if k != "image"}
    lines = ["\t".join(keys)] + ["\t".join(_fmt(r.get(k, "")) for k in keys) for r in rows]
    if means:
        lines.append("\t".join(["MEAN"] + [_fmt(means[k]) for k in keys[1:]]))
    table = "\n".join(lines) + "\n"
    (out / "metrics.tsv").write_text(table)
    _emit(args, table, {"images": rows, "means": means})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_report, run_suite, tiny_gradcheck_config

    config = model_config_only(args, tiny_gradcheck_config())
    results = run_suite(config, seed=args.seed or 0)
    doc = {"checks": [{"name": r.name, "max_rel_error": r.max_rel_error, "coords": r.coords,
                       "passed": r.passed} for r in results]}
    _emit(args, format_report(results), doc)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def cmd_synth(args) -> int:
    from .data import DegradationSpec, make_synthetic_dataset

    spec = DegradationSpec(kind=args.kind, intensity=args.intensity)
    make_synthetic_dataset(args.out, args.count, args.size, args.seed or 0, spec, not args.no_degraded)
    sys.stdout.write(f"wrote {args.count} images to {args.out}\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("--format", choices=("table", "structured-text"), default="table")

    p = argparse.ArgumentParser(prog="weatherremover", description="WeatherRemover toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="parameter / MAC / activation report")
    a.add_argument("--res", type=parse_res, default="720x480", metavar="WxH")
    a.add_argument("--convention", choices=cost.CONVENTIONS, default="conv-only")
    a.add_argument("--batch", type=int, default=1)
    a.add_argument("--detail", action="store_true", help="one row per layer instead of per stage")
    a.add_argument("--no-gfn-gate", action="store_true")
    a.add_argument("--no-dstage-gate", action="store_true")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("calibrate", parents=[common], help="fit unstated hyperparameters to the gating table")
    c.set_defaults(func=cmd_calibrate)

    b = sub.add_parser("ablate", parents=[common], help="ablation grids")
    b.add_argument("--grid", choices=("gating", "qkv", "sra-gfn", "all"), default="all")
    b.add_argument("--res", type=parse_res, default="720x480", metavar="WxH")
    b.add_argument("--train", action="store_true", help="also train a toy model per variant")
    b.add_argument("--data", help="training dataset directory (with --train)")
    b.add_argument("--held", help="held-out dataset directory (with --train)")
    b.add_argument("--iterations", type=int, default=200)
    b.set_defaults(func=cmd_ablate)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--data")
    t.add_argument("--out")
    t.add_argument("--iterations", type=int)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--held", help="evaluate on this dataset after training")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", parents=[common], help="restore images with a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--input", required=True, help="image file, image directory, or dataset directory")
    i.add_argument("--clean", help="directory of clean references with matching names")
    i.add_argument("--out", required=True)
    i.add_argument("--pad", action="store_true", help="reflect-pad to a multiple of 8 and crop back")
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=16)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--kind", choices=("rain-streak", "snow", "fog", "mixed"), default="rain-streak")
    s.add_argument("--intensity", type=float, default=0.5)
    s.add_argument("--no-degraded", action="store_true", help="clean images only")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ShapeError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    except (FormatError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
