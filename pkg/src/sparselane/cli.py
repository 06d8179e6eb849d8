"""Command-line interface: train, eval, infer, profile, sweep.

Every verb echoes its fully resolved configuration (stdout and
``resolved_config.yaml`` in the output directory) so runs are
reproducible from their artifacts alone.  Exit codes: 0 success, 1 usage
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
import yaml

from .config import RunConfig, config_from_dict, config_to_dict, load_config, save_config
from .data.tusimple import format_tusimple_record, write_label_file
from .model import build_model, load_checkpoint
from .profiler import VARIANTS, count_macs
from .reporting import (
    save_eval_figure,
    save_loss_curve,
    save_mac_figure,
    save_overlay,
    save_sweep_figure,
    write_csv,
)
from .training import build_dataset, evaluate, train


class _Parser(argparse.ArgumentParser):
    """argparse variant that exits 1 (not 2) on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(sub: argparse.ArgumentParser, checkpoint_required: bool = False):
    sub.add_argument("--config", type=Path, default=None, help="YAML run config")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--out", type=Path, default=None, help="output directory")
    sub.add_argument(
        "--checkpoint",
        type=Path,
        default=None,
        required=checkpoint_required,
        help="checkpoint archive (.npz)",
    )
    sub.add_argument(
        "--threshold", type=float, default=None, help="override the score threshold"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparselane", description=__doc__)
    subs = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    train_p = subs.add_parser("train", help="train a model")
    _add_common(train_p)
    train_p.set_defaults(func=cmd_train)

    eval_p = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(eval_p, checkpoint_required=True)
    eval_p.set_defaults(func=cmd_eval)

    infer_p = subs.add_parser("infer", help="run inference and export predictions")
    _add_common(infer_p, checkpoint_required=True)
    infer_p.set_defaults(func=cmd_infer)

    profile_p = subs.add_parser("profile", help="report analytic MAC counts")
    _add_common(profile_p)
    profile_p.set_defaults(func=cmd_profile)

    sweep_p = subs.add_parser("sweep", help="train/eval across one config axis")
    _add_common(sweep_p)
    sweep_p.set_defaults(func=cmd_sweep)
    return parser


def _resolve(args) -> tuple[RunConfig, Path]:
    run = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        run.seed = args.seed
    if args.threshold is not None:
        run.model.score_threshold = args.threshold
    out_dir = args.out if args.out is not None else Path("runs") / args.verb
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(run, out_dir / "resolved_config.yaml")
    print("resolved config:")
    print(yaml.safe_dump(config_to_dict(run), sort_keys=False))
    return run, out_dir


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)


def cmd_train(args) -> int:
    run, out_dir = _resolve(args)
    result = train(run, out_dir, resume_checkpoint=args.checkpoint)
    write_csv(out_dir / "loss_log.csv", result.log_rows)
    save_loss_curve(result.log_rows, out_dir / "loss_curve.png")
    report = result.report
    with open(out_dir / "train_metrics.txt", "w", encoding="utf-8") as handle:
        handle.write(report.to_text())
    _dump_json(out_dir / "train_metrics.json", report.to_key_values())
    save_eval_figure(report, out_dir / "train_metrics.png")
    print(
        f"trained {result.iterations_run} iterations"
        + (" (early stop)" if result.stopped_early else "")
    )
    print(f"train split F1 {report.f1:.4f}, checkpoint {result.final_checkpoint}")
    return 0


def cmd_eval(args) -> int:
    run, out_dir = _resolve(args)
    model = build_model(run.model, seed=run.seed)
    load_checkpoint(args.checkpoint, model)
    samples = build_dataset(run)
    report = evaluate(model, samples, run)
    with open(out_dir / "eval_report.txt", "w", encoding="utf-8") as handle:
        handle.write(report.to_text())
    _dump_json(out_dir / "eval_metrics.json", report.to_key_values())
    write_csv(out_dir / "per_image.csv", report.per_image)
    save_eval_figure(report, out_dir / "eval_summary.png")
    print(report.to_text())
    return 0


def cmd_infer(args) -> int:
    run, out_dir = _resolve(args)
    model = build_model(run.model, seed=run.seed)
    load_checkpoint(args.checkpoint, model)
    model.eval()
    samples = build_dataset(run)
    grid = run.model.grid()
    overlay_dir = out_dir / "overlays"
    overlay_dir.mkdir(parents=True, exist_ok=True)

    from .training import images_to_tensor  # local to avoid cycle at import time

    records = []
    batch = max(1, run.train.batch_size)
    with torch.no_grad():
        for start in range(0, len(samples), batch):
            chunk = samples[start : start + batch]
            final = model(images_to_tensor(chunk))[-1]
            for b, sample in enumerate(chunk):
                lanes = final.lanes(b, threshold=run.model.score_threshold)
                name = sample.meta.get("id") or sample.meta.get("raw_file") or f"img-{start+b}"
                records.append(format_tusimple_record(lanes, grid, str(name)))
                save_overlay(
                    sample.image, lanes, grid, overlay_dir / f"{Path(str(name)).stem}.png",
                    title=str(name),
                )
    pred_path = out_dir / "predictions.jsonl"
    write_label_file(pred_path, records)
    print(f"wrote {len(records)} prediction records to {pred_path}")
    return 0


def cmd_profile(args) -> int:
    run, out_dir = _resolve(args)
    reports = [count_macs(run.model, variant) for variant in VARIANTS]
    text = "\n".join(r.to_text() for r in reports)
    ratio = (
        count_macs(run.model, "hpa").terms["attention"]
        / count_macs(run.model, "vanilla_cross").terms["attention"]
    )
    text += f"\nrow-aligned / full attention cost ratio: {ratio:.6f} (1/H = 1/{run.model.feature_height})\n"
    with open(out_dir / "macs_report.txt", "w", encoding="utf-8") as handle:
        handle.write(text)
    write_csv(out_dir / "macs.csv", [r.to_key_values() for r in reports])
    save_mac_figure(reports, out_dir / "macs.png")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    run, out_dir = _resolve(args)
    axis = run.sweep.axis
    rows = []
    for value in run.sweep.values:
        for seed in run.sweep.seeds:
            point = config_from_dict(config_to_dict(run))
            point.seed = int(seed)
            if axis == "rotation_ratio":
                point.model.rotation_ratio = float(value)
            elif axis == "num_anchors":
                point.model.num_anchors = int(value)
            else:
                point.model.stages = int(value)
            tag = f"{axis}_{value}_seed{seed}"
            result = train(point, out_dir / tag)
            report = result.report
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "seed": seed,
                    "iterations": result.iterations_run,
                    "f1": report.f1,
                    "precision": report.precision,
                    "recall": report.recall,
                    "accuracy": report.accuracy,
                }
            )
            print(f"{tag}: F1 {report.f1:.4f}")
    write_csv(out_dir / "sweep_results.csv", rows)
    save_sweep_figure(rows, axis, out_dir / "sweep.png")
    header = f"{axis:>16} {'seed':>6} {'F1':>8} {'precision':>10} {'recall':>8}"
    print(header)
    for row in rows:
        print(
            f"{row['value']:>16} {row['seed']:>6} {row['f1']:>8.4f} "
            f"{row['precision']:>10.4f} {row['recall']:>8.4f}"
        )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    torch.set_num_threads(1)
    np.seterr(all="warn")
    try:
        return args.func(args)
    except Exception as err:  # runtime failures map to exit code 2
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
