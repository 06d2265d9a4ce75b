"""Command-line entry point: data, train, eval, entropy, verify, plot."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import verify as verify_mod
from .config import ConfigError, load_run_config
from .entanglement import ee_report
from .model import param_count
from .plotting import write_plots
from .train import (CheckpointError, MetricsRecord, TrainingError, checkpoint_load,
                    evaluate, run_training)


class LockError(RuntimeError):
    pass


def _acquire_lock(out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{lock} exists; another run owns this directory "
                        f"(remove the file if it is stale)") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    return lock


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="JSON run config")
    parser.add_argument("--d", type=int, default=None, help="base channel width")
    parser.add_argument("--n", type=int, default=None, help="basis frequency cutoff")
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--order", choices=["leftright", "updown"], default=None)
    parser.add_argument("--dataset", choices=["mnist", "fashion-mnist"], default=None)
    parser.add_argument("--data-dir", type=str, default=None)
    parser.add_argument("--out", type=str, default=None, help="output directory")


def _resolve(args: argparse.Namespace):
    return load_run_config(
        args.config, d=args.d, n=args.n, epochs=args.epochs, seed=args.seed,
        order=args.order, dataset=args.dataset, data_dir=args.data_dir,
        out_dir=args.out)


def _data_dir(cfg) -> Path:
    return data_mod.default_data_dir(os.environ.get(data_mod.DATA_DIR_ENV, cfg.data_dir))


def cmd_data(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    registry = cfg.registry if cfg.registry is not None else None
    counts = data_mod.prepare_dataset(cfg.dataset, _data_dir(cfg), registry)
    print(f"{cfg.dataset}: {counts['train']} train / {counts['test']} test samples "
          f"under {_data_dir(cfg) / cfg.dataset}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    print(f"model: N={cfg.model.n_pixels} d={cfg.model.d} n={cfg.model.n} "
          f"basis={cfg.model.basis} classes={cfg.model.num_classes} "
          f"parameters={param_count(cfg.model)}")
    dataset = data_mod.load_dataset(cfg.dataset, cfg.order, _data_dir(cfg))
    out_dir = Path(cfg.out_dir)
    lock = _acquire_lock(out_dir)
    try:
        run_training(cfg, dataset.train_x, dataset.train_y, dataset.test_x,
                     dataset.test_y, out_dir,
                     resume_from=args.resume)
    finally:
        lock.unlink(missing_ok=True)
    print(f"metrics and checkpoint written under {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    model, _, epoch, _, run_cfg, _ = checkpoint_load(args.checkpoint)
    dataset_name = args.dataset or run_cfg.dataset
    order = args.order or run_cfg.order
    data_dir = args.data_dir or run_cfg.data_dir
    x, y = data_mod.load_split(dataset_name, args.split, order,
                               data_mod.default_data_dir(
                                   os.environ.get(data_mod.DATA_DIR_ENV, data_dir)))
    accuracy, cost = evaluate(model, x, y)
    print(json.dumps({"checkpoint_epoch": epoch, "dataset": dataset_name,
                      "split": args.split, "accuracy": accuracy, "cost": cost}))
    return 0


def cmd_entropy(args: argparse.Namespace) -> int:
    model, _, epoch, _, run_cfg, _ = checkpoint_load(args.checkpoint)
    order = args.order or run_cfg.order
    report = ee_report(model, bipartition=order, epoch=epoch)
    text = report.to_json()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        tmp = out.with_name(out.name + ".tmp")
        tmp.write_text(text + "\n")
        tmp.replace(out)
    print(text)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    return 0 if verify_mod.run(args.level) else 1


def _read_metrics_csv(path: Path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            has_ee = row.get("ee_avg", "") != ""
            records.append(MetricsRecord(
                epoch=int(row["epoch"]), lr=float(row["lr"]),
                train_cost=float(row["train_cost"]), test_cost=float(row["test_cost"]),
                train_acc=float(row["train_acc"]), test_acc=float(row["test_acc"]),
                ee_per_class=tuple(float(row[f"ee_class_{i}"]) for i in range(10)) if has_ee else None,
                ee_avg=float(row["ee_avg"]) if has_ee else None))
    return records


def cmd_plot(args: argparse.Namespace) -> int:
    records = _read_metrics_csv(Path(args.metrics))
    if not records:
        print("metrics file has no rows", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else Path(args.metrics).parent
    written = write_plots(records, out_dir, window=args.window, warmup_frac=args.warmup_frac)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcnn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data", help="fetch and prepare a dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_data)

    p = sub.add_parser("train", help="train a model and log metrics")
    _add_common(p)
    p.add_argument("--resume", type=str, default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--dataset", choices=["mnist", "fashion-mnist"], default=None)
    p.add_argument("--order", choices=["leftright", "updown"], default=None)
    p.add_argument("--data-dir", type=str, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("entropy", help="entanglement entropy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--order", choices=["leftright", "updown"], default=None)
    p.add_argument("--out", type=str, default=None, help="write the JSON report here")
    p.set_defaults(fn=cmd_entropy)

    p = sub.add_parser("verify", help="run the oracle and invariant suites")
    p.add_argument("--level", choices=["fast", "full"], default="fast")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("plot", help="emit SVG figures from a metrics CSV")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--window", type=int, default=2)
    p.add_argument("--warmup-frac", type=float, default=1.0 / 3.0)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError, TrainingError, LockError,
            data_mod.DataError, data_mod.ChecksumError, data_mod.IdxFormatError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
