"""Command line entry point exposing every pipeline stage.

Exit codes: 0 success, 1 validation problem (bad flags, missing artifacts,
malformed configs), 2 runtime failure. Every stage prints a one-line JSON
summary to stdout and writes its artifact under --out-dir. Each flag has a
same-named key in the flat JSON config file; explicit flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig
from .datagen import SHIFT3
from .errors import ValidationError
from . import pipeline

STAGES = {
    "gen-data": pipeline.stage_gen_data,
    "train-source": pipeline.stage_train_source,
    "fit-gmm": pipeline.stage_fit_gmm,
    "evaluate": pipeline.stage_evaluate,
    "bound-check": pipeline.stage_bound_check,
}

SWEEP_PRESETS = {
    "conf_threshold": [0.0, 0.8, 0.97],
    "n_projections": [5, 20, 50, 100, 200],
}

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="flat JSON config file")
    for name, fld in _CONFIG_FIELDS.items():
        if name == "out_dir":
            continue
        ftype = fld.type if isinstance(fld.type, type) else {"int": int, "float": float, "str": str}.get(str(fld.type), str)
        parser.add_argument(
            f"--{name.replace('_', '-')}",
            dest=name,
            type=ftype,
            default=None,
            help=f"config key {name} (default {fld.default!r})",
        )
    parser.add_argument("--out-dir", dest="out_dir", type=str, default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            data.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
    if getattr(args, "benchmark", False):
        data.update(
            layout=SHIFT3.layout,
            n_classes=SHIFT3.n_classes,
            width=SHIFT3.width,
            height=SHIFT3.height,
            hue_spread_deg=SHIFT3.hue_spread_deg,
            hue_deg=SHIFT3.hue_deg,
            brightness=SHIFT3.brightness,
            noise_scale=SHIFT3.noise_scale,
            warp=SHIFT3.warp,
            texture_amp=SHIFT3.texture_amp,
            noise_sigma=SHIFT3.noise_sigma,
            shade_amp=SHIFT3.shade_amp,
            data_seed=SHIFT3.seed,
        )
    for name in _CONFIG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return RunConfig.from_json(data)


def _emit(stage: str, cfg: RunConfig, payload: dict) -> None:
    line = {"schema": 1, "stage": stage, "out_dir": str(cfg.out_dir)}
    line.update(payload)
    print(json.dumps(line, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segadapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "train-source", "fit-gmm", "adapt", "evaluate", "bound-check", "run", "sweep", "report"):
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.add_argument(
            "--benchmark",
            action="store_true",
            help="use the pinned shift-3 benchmark domain spec",
        )
        if name == "adapt":
            p.add_argument(
                "--assert-source-free",
                action="store_true",
                help="fail if source data is still present in the run directory",
            )
        if name == "evaluate":
            p.add_argument(
                "--checkpoint",
                type=str,
                default=pipeline.ADAPTED_DIR,
                help="checkpoint directory (relative to out-dir) to evaluate",
            )
        if name == "sweep":
            p.add_argument("--param", type=str, required=True, choices=sorted(SWEEP_PRESETS) + ["swd_weight", "seed"])
            p.add_argument(
                "--values",
                type=str,
                default=None,
                help="comma-separated values; presets used when omitted",
            )
    return parser


def _run_sweep(cfg: RunConfig, args) -> dict:
    param = args.param
    if args.values is not None:
        raw = [v for v in args.values.split(",") if v != ""]
    elif param in SWEEP_PRESETS:
        raw = [str(v) for v in SWEEP_PRESETS[param]]
    else:
        raise ValidationError(f"--values required for parameter {param!r}")
    caster = type(getattr(cfg, param))
    values = [caster(float(v)) if caster in (int, float) else caster(v) for v in raw]

    rows = []
    base = Path(cfg.out_dir)
    for value in values:
        point_cfg = dataclasses.replace(cfg, **{param: value})
        point_dir = base / f"{param}={value}"
        report = pipeline.run_full(point_cfg, point_dir)
        rows.append(
            {
                "value": value,
                "pre_miou": report.pre_metrics["miou"],
                "post_miou": report.post_metrics["miou"],
                "swd_last": report.swd_curve[-1] if report.swd_curve else None,
                "out_dir": str(point_dir),
            }
        )
    base.mkdir(parents=True, exist_ok=True)
    csv_lines = [f"{param},pre_miou,post_miou,swd_last"]
    for r in rows:
        csv_lines.append(f"{r['value']},{r['pre_miou']!r},{r['post_miou']!r},{r['swd_last']!r}")
    (base / "sweep.csv").write_text("\n".join(csv_lines) + "\n")
    return {"param": param, "points": rows}


def _run_report(cfg: RunConfig) -> dict:
    out_dir = Path(cfg.out_dir)
    report_path = out_dir / pipeline.REPORT_DIR / "run_report.json"
    if not report_path.exists():
        raise ValidationError(f"missing run report: {report_path} (run the adapt stage first)")
    report = pipeline.RunReport.load(out_dir / pipeline.REPORT_DIR)
    bound_path = out_dir / "bound" / "bound_terms.json"
    bound = json.loads(bound_path.read_text()) if bound_path.exists() else report.bound_post
    return {
        "pre_miou": report.pre_metrics["miou"],
        "post_miou": report.post_metrics["miou"],
        "miou_gain": report.post_metrics["miou"] - report.pre_metrics["miou"],
        "swd_first": report.swd_curve[0] if report.swd_curve else None,
        "swd_last": report.swd_curve[-1] if report.swd_curve else None,
        "losses_csv": str(out_dir / pipeline.REPORT_DIR / "losses.csv"),
        "bound": bound,
    }


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "gen-data":
            _emit(args.command, cfg, pipeline.stage_gen_data(cfg, cfg.out_dir))
        elif args.command == "train-source":
            _emit(args.command, cfg, pipeline.stage_train_source(cfg, cfg.out_dir))
        elif args.command == "fit-gmm":
            _emit(args.command, cfg, pipeline.stage_fit_gmm(cfg, cfg.out_dir))
        elif args.command == "adapt":
            _emit(
                args.command,
                cfg,
                pipeline.stage_adapt(cfg, cfg.out_dir, assert_source_free=args.assert_source_free),
            )
        elif args.command == "evaluate":
            _emit(args.command, cfg, pipeline.stage_evaluate(cfg, cfg.out_dir, args.checkpoint))
        elif args.command == "bound-check":
            _emit(args.command, cfg, pipeline.stage_bound_check(cfg, cfg.out_dir))
        elif args.command == "run":
            report = pipeline.run_full(cfg, cfg.out_dir)
            _emit(
                args.command,
                cfg,
                {
                    "pre_miou": report.pre_metrics["miou"],
                    "post_miou": report.post_metrics["miou"],
                },
            )
        elif args.command == "sweep":
            _emit(args.command, cfg, _run_sweep(cfg, args))
        elif args.command == "report":
            _emit(args.command, cfg, _run_report(cfg))
        else:  # unreachable with required=True
            parser.error(f"unknown command {args.command!r}")
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
