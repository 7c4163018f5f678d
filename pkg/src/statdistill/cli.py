"""Command-line harness: pretrain, distill, ablate, evaluate, sweep, and
export-features.

Every command takes a run config (JSON RunSpec), optionally patched by
--seed, --out and repeated --override key=value flags, and writes a
self-describing run directory: config snapshot, checkpoints, a line-
delimited metrics stream, a summary, and rendered figures.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import load_tensors
from .config import (RunSpec, apply_overrides, build_dataset, spec_from_dict,
                     spec_from_file, spec_to_dict)
from .errors import StatDistillError
from .metrics import evaluate_model, export_features, load_features
from .models import build_wrn
from .trainer import (LossConfig, build_adapters, load_teacher,
                      run_distillation)

_SUPERVISED = LossConfig(alpha=0.0, beta=0.0, positions=(), baseline="none")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON file")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--seed", type=int, help="training seed (overrides the config)")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="dotted config override, repeatable")


def _load_spec(args) -> RunSpec:
    spec = spec_from_file(args.config)
    if args.override:
        spec = apply_overrides(spec, args.override)
    if args.seed is not None:
        spec = replace(spec, train=replace(spec.train, seed=args.seed))
    if args.out:
        spec = replace(spec, out_dir=args.out)
    return spec


def _print_final(report) -> None:
    print(json.dumps(report.final))


def _append_jsonl(path: Path, record: dict) -> None:
    with path.open("a") as fh:
        fh.write(json.dumps(record) + "\n")


# -- commands ---------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    spec = _load_spec(args)
    supervised = replace(spec, student=spec.teacher, losses=_SUPERVISED,
                         teacher_checkpoint="")
    report = run_distillation(supervised)
    _print_final(report)
    return 0


def cmd_distill(args) -> int:
    spec = _load_spec(args)
    report = run_distillation(spec, resume=args.resume)
    _print_final(report)
    return 0


def cmd_ablate(args) -> int:
    spec = _load_spec(args)
    base = Path(spec.out_dir)
    if args.grid == "losses":
        alpha, beta = spec.losses.alpha, spec.losses.beta
        variants = [
            ("l_sm", replace(spec.losses, alpha=alpha, beta=0.0)),
            ("l_adain", replace(spec.losses, alpha=0.0, beta=beta)),
            ("l_sm_adain", replace(spec.losses, alpha=alpha, beta=beta)),
        ]
    else:
        variants = [
            ("conv2", replace(spec.losses, positions=("conv2",))),
            ("conv3", replace(spec.losses, positions=("conv3",))),
            ("conv4", replace(spec.losses, positions=("conv4",))),
            ("conv2_3_4", replace(spec.losses,
                                  positions=("conv2", "conv3", "conv4"))),
        ]
    base.mkdir(parents=True, exist_ok=True)
    table_path = base / "ablation.jsonl"
    table_path.write_text("")
    rows = []
    for name, losses in variants:
        run_spec = replace(spec, losses=losses,
                           out_dir=str(base / f"{args.grid}_{name}"))
        report = run_distillation(run_spec)
        rows.append((name, report.final))
        _append_jsonl(table_path, {"name": name, **report.final})
        print(json.dumps({"name": name, **report.final}))
    from . import figures
    figures.save_comparison_bars(rows, base / "figures" / "ablation.png")
    return 0


def _load_run(run_dir):
    """Rebuild (spec, student, teacher, adapters, test data, last epoch)
    from a self-describing run directory."""
    run = Path(run_dir)
    spec = spec_from_file(run / "config.json")
    checkpoint = run / "model.sdt"
    if not checkpoint.exists():
        raise FileNotFoundError(f"no checkpoint at {checkpoint}")
    state = load_tensors(checkpoint)
    model_state = {k: v for k, v in state.items()
                   if not k.startswith(("adapter.", "optim.", "meta."))}
    student = build_wrn(spec.student, seed=spec.train.seed,
                        dtype=spec.train.dtype)
    student.load_state_dict(model_state)
    student.eval()
    teacher = None
    if spec.teacher_checkpoint:
        teacher = load_teacher(spec.teacher, spec.teacher_checkpoint,
                               dtype=spec.train.dtype)
    adapters = build_adapters(student, teacher, tuple(spec.losses.positions),
                              seed=spec.train.seed, dtype=spec.train.dtype)
    for hook, adapter in adapters.items():
        prefix = f"adapter.{hook}."
        sub = {k[len(prefix):]: v for k, v in state.items()
               if k.startswith(prefix)}
        if sub:
            adapter.load_state_dict(sub)
    last_epoch = 0
    metrics_path = run / "metrics.jsonl"
    if metrics_path.exists():
        lines = [line for line in metrics_path.read_text().splitlines() if line]
        if lines:
            last_epoch = json.loads(lines[-1])["epoch"]
    _, test_data = build_dataset(spec.dataset)
    return spec, student, teacher, adapters, test_data, last_epoch


def cmd_evaluate(args) -> int:
    spec, student, teacher, adapters, test_data, last_epoch = _load_run(args.run)
    record = evaluate_model(student, teacher, test_data, epoch=last_epoch,
                            adapters=adapters, eval_seed=spec.eval_seed)
    payload = record.to_dict()
    (Path(args.run) / "evaluation.json").write_text(
        json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload))
    return 0


def _sweep_worker(raw_spec: dict) -> dict:
    report = run_distillation(spec_from_dict(raw_spec))
    return report.final


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    values = [float(v) for v in args.values.split(",") if v]
    base = Path(spec.out_dir)
    base.mkdir(parents=True, exist_ok=True)
    jobs = []
    for value in values:
        losses = replace(spec.losses, **{args.param: value})
        run_spec = replace(spec, losses=losses,
                           out_dir=str(base / f"{args.param}_{value:g}"))
        jobs.append((f"{args.param}={value:g}", spec_to_dict(run_spec)))
    if args.processes > 1:
        with ProcessPoolExecutor(max_workers=args.processes) as pool:
            finals = list(pool.map(_sweep_worker, [raw for _, raw in jobs]))
    else:
        finals = [_sweep_worker(raw) for _, raw in jobs]
    table_path = base / "sweep.jsonl"
    table_path.write_text("")
    rows = []
    for (name, _), final in zip(jobs, finals):
        rows.append((name, final))
        _append_jsonl(table_path, {"name": name, **final})
        print(json.dumps({"name": name, **final}))
    from . import figures
    figures.save_comparison_bars(rows, base / "figures" / "sweep.png")
    return 0


def cmd_export_features(args) -> int:
    _, student, _, _, test_data, _ = _load_run(args.run)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_features(student, test_data, args.position, out)
    labels, features = load_features(out)
    from . import figures
    figures.save_feature_scatter(features, labels, out.with_suffix(".png"))
    print(f"wrote {len(labels)} rows to {out}")
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="statdistill",
        description="Statistics-transfer knowledge distillation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="supervised training of the teacher config")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("distill", help="train the student with the configured losses")
    _add_common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the run's resume checkpoint if present")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("ablate", help="run a small grid of loss or position variants")
    _add_common(p)
    p.add_argument("--grid", choices=("losses", "positions"), default="losses")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("evaluate", help="recompute metrics for a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="sweep one loss weight over a value grid")
    _add_common(p)
    p.add_argument("--param", choices=("alpha", "beta"), default="alpha")
    p.add_argument("--values", default="0.1,1,10",
                   help="comma-separated weights (default 0.1,1,10)")
    p.add_argument("--processes", type=int, default=1,
                   help="independent worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-features",
                       help="write pooled features of a run's model to CSV")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--position", default="conv4",
                   choices=("conv2", "conv3", "conv4"))
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (StatDistillError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
