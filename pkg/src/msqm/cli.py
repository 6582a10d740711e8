"""Command-line entry point: ``msqm {train,eval,bench-sweep,gradcheck,synth-gen}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .bench import DEFAULT_R_VALUES, sweep_token_keep, write_sweep
from .config import TrainConfig, load_config
from .data import load_dataset, write_dataset
from .model import MODES, VideoMaskModel
from .train import TrainingError, evaluate, load_model, load_splits, train

log = logging.getLogger("msqm")


def _r_values(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad r list {text!r}") from exc
    if not values or any(not 0.0 < v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError(f"r values must lie in (0, 1], got {text!r}")
    return values


def _config(args) -> TrainConfig:
    overrides = dict(
        seed=getattr(args, "seed", None),
        mode=getattr(args, "mode", None),
        keep_ratio=getattr(args, "keep_ratio", None),
    )
    if args.config:
        return load_config(args.config, **overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _eval_clips(args, cfg: TrainConfig):
    if args.data:
        return list(load_dataset(args.data))
    return load_splits(cfg)[1]


def cmd_train(args) -> int:
    cfg = _config(args)
    result = train(cfg, args.out)
    print(f"best val mIoU {result.best_miou:.4f} at epoch {result.best_epoch}; checkpoint {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    report = evaluate(args.checkpoint, _eval_clips(args, cfg), cfg, args.mode, args.out, args.keep_ratio)
    print(f"{report.mode}: mIoU {report.miou:.4f}  J {report.j:.4f}  over {len(report.per_clip)} clips")
    return 0


def cmd_bench_sweep(args) -> int:
    cfg = _config(args)
    if args.checkpoint:
        model = load_model(args.checkpoint, cfg, args.mode)
    else:
        log.warning("no checkpoint given; the mIoU column reflects an untrained model")
        model = VideoMaskModel(cfg.model_config())
    records = sweep_token_keep(
        model, _eval_clips(args, cfg), args.r_values, repeats=cfg.bench_repeats, warmup=cfg.bench_warmup
    )
    csv_path, svg_path = write_sweep(records, args.out)
    for rec in records:
        print(f"r={rec.r:g}  peak={rec.peak_bytes}  ms/frame={rec.ms_per_frame:.2f}  mIoU={rec.miou:.4f}")
    print(f"wrote {csv_path} and {svg_path}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import format_report, run_gradcheck

    results = run_gradcheck(only=args.only)
    if not results:
        print("no components selected", file=sys.stderr)
        return 2
    print(format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradcheck FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} components within tolerance")
    return 0


def cmd_synth_gen(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = cfg.replace(data_seed=args.seed)
    train_set, val_set = load_splits(cfg.replace(data_root=""))
    out = Path(args.out)
    write_dataset(out / "train", train_set)
    write_dataset(out / "val", val_set)
    print(f"wrote {len(train_set)} train and {len(val_set)} val clips under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msqm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="plain-text 'key = value' config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=out_required, help="output directory")

    def model_flags(p):
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--keep-ratio", type=float, dest="keep_ratio")

    p = sub.add_parser("train", help="train a model and write metrics.csv plus checkpoint")
    common(p)
    model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint, write eval.csv and predicted masks")
    common(p, out_required=False)
    model_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset root (default: synthetic validation split)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-sweep", help="token keep ratio sweep, writes sweep.csv and sweep.svg")
    common(p)
    model_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset root (default: synthetic validation split)")
    p.add_argument("--r-values", type=_r_values, default=DEFAULT_R_VALUES, dest="r_values",
                   help="comma-separated keep ratios")
    p.set_defaults(func=cmd_bench_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive and the toy model")
    p.add_argument("--only", nargs="+", help="restrict to these component names")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth-gen", help="write a synthetic train/val dataset as PPM/PGM files")
    common(p)
    p.set_defaults(func=cmd_synth_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
