"""Training loop, evaluation, metrics files, and checkpointing."""
from __future__ import annotations

import json
import os
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import entanglement
from .config import ModelConfig, RunConfig, TrainConfig, run_config_from_dict
from .data import batches
from .model import Model, classify, init_model, squared_distance_loss
from .optim import AdamW, lr_schedule

CHECKPOINT_VERSION = 1

EE_CLASS_COLUMNS = tuple(f"ee_class_{y}" for y in range(10))
CSV_COLUMNS = ("epoch", "lr", "train_cost", "test_cost", "train_acc", "test_acc",
               *EE_CLASS_COLUMNS, "ee_avg")


class TrainingError(RuntimeError):
    """Aborted run (non-finite loss); the message carries layer diagnostics."""


class CheckpointError(RuntimeError):
    """Unreadable or incompatible checkpoint file."""


@dataclass
class MetricsRecord:
    epoch: int
    lr: float
    train_cost: float
    test_cost: float
    train_acc: float
    test_acc: float
    ee_per_class: tuple[float, ...] | None = None
    ee_avg: float | None = None

    def row(self) -> list[str]:
        cells = [str(self.epoch), repr(float(self.lr)), repr(float(self.train_cost)),
                 repr(float(self.test_cost)), repr(float(self.train_acc)),
                 repr(float(self.test_acc))]
        if self.ee_per_class is None:
            cells.extend([""] * (len(EE_CLASS_COLUMNS) + 1))
        else:
            per_class = list(self.ee_per_class)
            per_class += [float("nan")] * (len(EE_CLASS_COLUMNS) - len(per_class))
            cells.extend(repr(float(v)) for v in per_class[:len(EE_CLASS_COLUMNS)])
            cells.append(repr(float(self.ee_avg)))
        return cells

    def to_json_dict(self) -> dict:
        return {
            "epoch": self.epoch, "lr": self.lr, "train_cost": self.train_cost,
            "test_cost": self.test_cost, "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "ee_per_class": list(self.ee_per_class) if self.ee_per_class is not None else None,
            "ee_avg": self.ee_avg,
        }


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_metrics(records: list[MetricsRecord], csv_path: Path, jsonl_path: Path | None = None) -> None:
    lines = [",".join(CSV_COLUMNS)]
    lines.extend(",".join(rec.row()) for rec in records)
    _atomic_write(Path(csv_path), "\n".join(lines) + "\n")
    if jsonl_path is not None:
        _atomic_write(Path(jsonl_path),
                      "\n".join(json.dumps(rec.to_json_dict()) for rec in records) + "\n")


def _diagnostics(model: Model) -> str:
    parts = [f"{name}: |max|={np.abs(arr).max():.3e}" for name, arr in model.trainables()]
    return "; ".join(parts)


def train_epoch(model: Model, samples: np.ndarray, labels: np.ndarray,
                optimizer: AdamW, config: TrainConfig, epoch: int,
                rng: np.random.Generator) -> dict[str, float]:
    """One pass over shuffled batches with train-mode normalization.

    Returns the running train cost (batch-size weighted) and accuracy of the
    train-mode outputs seen during the pass.
    """
    lr = lr_schedule(epoch, config)
    total_cost = 0.0
    total_correct = 0
    count = 0
    arrays = [arr for _, arr in model.trainables()]
    for idx in batches(samples.shape[0], config.batch_size, rng=rng):
        x = samples[idx]
        y = labels[idx]
        with ad.GradientTape() as tape:
            loss, scores = model.loss_graph(tape, x, y)
            if not np.isfinite(loss.value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}: {loss.value!r}; {_diagnostics(model)}")
            grads = ad.backward(tape)
        optimizer.step(arrays, grads, lr)
        total_cost += float(loss.value) * x.shape[0]
        total_correct += int((classify(scores.value) == y).sum())
        count += x.shape[0]
    return {"train_cost": total_cost / count, "train_acc": total_correct / count, "lr": lr}


def evaluate(model: Model, samples: np.ndarray, labels: np.ndarray,
             batch_size: int = 512) -> tuple[float, float]:
    """(accuracy, cost) with evaluation-mode statistics."""
    total_cost = 0.0
    correct = 0
    n = samples.shape[0]
    for start in range(0, n, batch_size):
        x = samples[start:start + batch_size]
        y = labels[start:start + batch_size]
        scores = model.forward(x, mode="eval")
        total_cost += squared_distance_loss(scores, y) * x.shape[0]
        correct += int((classify(scores) == y).sum())
    return correct / n, total_cost / n


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def checkpoint_save(path: str | Path, model: Model, optimizer: AdamW, epoch: int,
                    rng: np.random.Generator, run_config: RunConfig,
                    records: list[MetricsRecord] | None = None) -> None:
    """Atomically persist the full training state (bit-exact round trip)."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": epoch,
        "run_config": run_config.to_dict(),
        "rng_state": _rng_state(rng),
        "optimizer": {k: optimizer.state_dict()[k]
                      for k in ("beta1", "beta2", "eps", "weight_decay", "step_count")},
        "records": [rec.to_json_dict() for rec in (records or [])],
    }
    arrays: dict[str, np.ndarray] = dict(model.state_arrays())
    for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
        arrays[f"opt_m_{i}"] = m
        arrays[f"opt_v_{i}"] = v
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    os.replace(tmp, path)


def checkpoint_load(path: str | Path) -> tuple[Model, AdamW, int, np.random.Generator,
                                               RunConfig, list[MetricsRecord]]:
    path = Path(path)
    try:
        with np.load(path) as payload:
            meta = json.loads(bytes(payload["meta"]).decode())
            arrays = {k: payload[k] for k in payload.files if k != "meta"}
    except (OSError, ValueError, KeyError, json.JSONDecodeError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')!r} unsupported "
                              f"(expected {CHECKPOINT_VERSION})")
    run_config = run_config_from_dict(meta["run_config"])
    model = init_model(run_config.model, seed=0)
    model.load_state_arrays(arrays)
    n_params = sum(1 for _ in model.trainables())
    opt_meta = meta["optimizer"]
    optimizer = AdamW.from_state_dict({
        **opt_meta,
        "m": [arrays[f"opt_m_{i}"] for i in range(n_params)],
        "v": [arrays[f"opt_v_{i}"] for i in range(n_params)],
    })
    rng = _rng_from_state(meta["rng_state"])
    records = [MetricsRecord(
        epoch=r["epoch"], lr=r["lr"], train_cost=r["train_cost"], test_cost=r["test_cost"],
        train_acc=r["train_acc"], test_acc=r["test_acc"],
        ee_per_class=tuple(r["ee_per_class"]) if r.get("ee_per_class") is not None else None,
        ee_avg=r.get("ee_avg")) for r in meta.get("records", [])]
    return model, optimizer, epoch_from_meta(meta), rng, run_config, records


def epoch_from_meta(meta: dict) -> int:
    return int(meta["epoch"])


def _measure_ee(model: Model, order: str, epoch: int) -> entanglement.EEReport:
    return entanglement.ee_report(model, bipartition=order, epoch=epoch)


def warm_batchnorm(model: Model, samples: np.ndarray, num_batches: int = 10,
                   batch_size: int = 50) -> None:
    """Populate running statistics with train-mode forward passes (no
    parameter updates).

    The exact multilinear description ties its affine parts to data
    statistics; with the parameter-free defaults (zero mean, unit variance)
    the constant channel decouples from the classifier and the untrained
    entropy is not meaningful.  Uses the leading samples in dataset order,
    so the result is deterministic.
    """
    limit = min(num_batches * batch_size, samples.shape[0])
    for start in range(0, limit, batch_size):
        model.forward(samples[start:start + batch_size], mode="train")


def run_training(run_config: RunConfig, train_x: np.ndarray, train_y: np.ndarray,
                 test_x: np.ndarray, test_y: np.ndarray, out_dir: str | Path,
                 resume_from: str | Path | None = None,
                 log=print) -> list[MetricsRecord]:
    """Full protocol: epoch-0 evaluation row, then one record per epoch with
    a checkpoint and atomically rewritten metrics files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = run_config.train
    if resume_from is not None:
        model, optimizer, start_epoch, rng, run_config, records = checkpoint_load(resume_from)
        cfg = run_config.train
    else:
        model = init_model(run_config.model, cfg.seed)
        warm_batchnorm(model, train_x, batch_size=cfg.batch_size)
        optimizer = AdamW([arr.shape for _, arr in model.trainables()],
                          weight_decay=cfg.weight_decay)
        rng = np.random.default_rng([cfg.seed, 1])
        start_epoch = 0
        records = []
        train_acc, train_cost = evaluate(model, train_x, train_y)
        test_acc, test_cost = evaluate(model, test_x, test_y)
        rec = MetricsRecord(epoch=0, lr=lr_schedule(0, cfg), train_cost=train_cost,
                            test_cost=test_cost, train_acc=train_acc, test_acc=test_acc)
        if cfg.track_ee:
            report = _measure_ee(model, run_config.order, 0)
            rec.ee_per_class = report.per_class
            rec.ee_avg = report.average
        records.append(rec)

    csv_path = out / "metrics.csv"
    jsonl_path = out / "metrics.jsonl"
    ckpt_path = out / "checkpoint.npz"
    write_metrics(records, csv_path, jsonl_path)
    checkpoint_save(ckpt_path, model, optimizer, start_epoch, rng, run_config, records)

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        stats = train_epoch(model, train_x, train_y, optimizer, cfg, epoch - 1, rng)
        test_acc, test_cost = evaluate(model, test_x, test_y)
        rec = MetricsRecord(epoch=epoch, lr=stats["lr"], train_cost=stats["train_cost"],
                            test_cost=test_cost, train_acc=stats["train_acc"],
                            test_acc=test_acc)
        if cfg.track_ee and (epoch % cfg.ee_period == 0 or epoch == cfg.epochs):
            report = _measure_ee(model, run_config.order, epoch)
            rec.ee_per_class = report.per_class
            rec.ee_avg = report.average
        records.append(rec)
        write_metrics(records, csv_path, jsonl_path)
        checkpoint_save(ckpt_path, model, optimizer, epoch, rng, run_config, records)
        log(f"epoch {epoch}/{cfg.epochs} lr={stats['lr']:g} "
            f"train_cost={stats['train_cost']:.4f} train_acc={stats['train_acc']:.4f} "
            f"test_cost={test_cost:.4f} test_acc={test_acc:.4f}"
            + (f" ee_avg={rec.ee_avg:.4f}" if rec.ee_avg is not None else ""))
    return records
