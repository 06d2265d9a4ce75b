"""Configuration dataclasses and the JSON run-config loader."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

CONFIG_VERSION = 1

FOURIER = "fourier"
LEGENDRE = "legendre"
ORDER_LEFT_RIGHT = "leftright"
ORDER_UP_DOWN = "updown"
FLATTEN_ORDERS = (ORDER_LEFT_RIGHT, ORDER_UP_DOWN)
DATASETS = ("mnist", "fashion-mnist")


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending field path."""


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The image is a flat chain of ``n_pixels`` values in [0, 1]; depth is
    ``levels = log2(n_pixels)``.  Channel widths follow ``channels`` when
    given, otherwise the default schedule ``d * (level + 1)``.  ``n`` is the
    basis cutoff: the Fourier representation emits 2n channels (frequencies
    1..n, cosine and sine), the Legendre one n channels (degrees 1..n); the
    constant basis function is never emitted as a channel and enters only
    through the augmented tensor description.
    """

    n_pixels: int = 256
    d: int = 8
    n: int | None = None
    num_classes: int = 10
    basis: str = FOURIER
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    channels: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        _require(self.n_pixels >= 2 and self.n_pixels & (self.n_pixels - 1) == 0,
                 "model.n_pixels", f"must be a power of two >= 2, got {self.n_pixels}")
        _require(self.basis in (FOURIER, LEGENDRE),
                 "model.basis", f"must be one of {FOURIER!r}, {LEGENDRE!r}, got {self.basis!r}")
        _require(self.d >= 1, "model.d", "must be >= 1")
        _require(self.num_classes >= 1, "model.num_classes", "must be >= 1")
        _require(self.bn_epsilon > 0, "model.bn_epsilon", "must be > 0")
        _require(0 < self.bn_momentum <= 1, "model.bn_momentum", "must be in (0, 1]")
        if self.channels is not None:
            ch = tuple(int(c) for c in self.channels)
            object.__setattr__(self, "channels", ch)
            _require(len(ch) == self.levels + 1, "model.channels",
                     f"needs {self.levels + 1} entries for n_pixels={self.n_pixels}, got {len(ch)}")
            _require(all(c >= 1 for c in ch), "model.channels", "entries must be >= 1")
        d0 = self.channel_schedule[0]
        if self.n is None:
            if self.basis == FOURIER:
                _require(d0 % 2 == 0, "model.d",
                         "Fourier basis needs an even first channel width (2 channels per frequency)")
                object.__setattr__(self, "n", d0 // 2)
            else:
                object.__setattr__(self, "n", d0)
        else:
            _require(self.n >= 1, "model.n", "must be >= 1")
            expected = 2 * self.n if self.basis == FOURIER else self.n
            _require(d0 == expected, "model.n",
                     f"basis {self.basis!r} with n={self.n} implies first channel width "
                     f"{expected}, but the schedule starts at {d0}")

    @property
    def levels(self) -> int:
        return self.n_pixels.bit_length() - 1

    @property
    def channel_schedule(self) -> tuple[int, ...]:
        """Widths d_0..d_L (the classifier output |C| is not included)."""
        if self.channels is not None:
            return self.channels
        return tuple(self.d * (l + 1) for l in range(self.levels + 1))

    @property
    def local_dim(self) -> int:
        """Dimension of the truncated single-pixel function space (constant included)."""
        return self.channel_schedule[0] + 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_pixels": self.n_pixels, "d": self.d, "n": self.n,
            "num_classes": self.num_classes, "basis": self.basis,
            "bn_epsilon": self.bn_epsilon, "bn_momentum": self.bn_momentum,
            "channels": list(self.channels) if self.channels is not None else None,
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 0.01
    lr_half_period: int = 10
    epochs: int = 90
    batch_size: int = 50
    seed: int = 0
    ee_period: int = 1
    ee_window: int = 2
    track_ee: bool = True

    def __post_init__(self) -> None:
        _require(self.learning_rate >= 0, "train.learning_rate", "must be >= 0")
        _require(self.weight_decay >= 0, "train.weight_decay", "must be >= 0")
        _require(self.lr_half_period >= 1, "train.lr_half_period", "must be >= 1")
        _require(self.epochs >= 0, "train.epochs", "must be >= 0")
        _require(self.batch_size >= 1, "train.batch_size", "must be >= 1")
        _require(self.ee_period >= 1, "train.ee_period", "must be >= 1")
        _require(self.ee_window >= 1, "train.ee_window", "must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = "mnist"
    order: str = ORDER_LEFT_RIGHT
    data_dir: str = "data"
    out_dir: str = "runs/default"
    registry: dict[str, Any] | None = None

    def __post_init__(self) -> None:
        _require(self.dataset in DATASETS, "data.dataset",
                 f"must be one of {DATASETS}, got {self.dataset!r}")
        _require(self.order in FLATTEN_ORDERS, "data.order",
                 f"must be one of {FLATTEN_ORDERS}, got {self.order!r}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "version": CONFIG_VERSION,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": {"dataset": self.dataset, "order": self.order, "dir": self.data_dir},
            "out": self.out_dir,
        }
        if self.registry is not None:
            out["data"]["registry"] = self.registry
        return out


def _build_section(cls, payload: dict[str, Any], path: str):
    allowed = {f.name for f in fields(cls)}
    for key in payload:
        _require(key in allowed, f"{path}.{key}", "unknown field")
    if "channels" in payload and payload["channels"] is not None:
        payload = dict(payload, channels=tuple(payload["channels"]))
    return cls(**payload)


def run_config_from_dict(raw: dict[str, Any]) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a JSON object")
    version = raw.get("version", CONFIG_VERSION)
    _require(version == CONFIG_VERSION, "version",
             f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    known = {"version", "model", "train", "data", "out"}
    for key in raw:
        _require(key in known, key, "unknown section")
    model = _build_section(ModelConfig, dict(raw.get("model", {})), "model")
    train = _build_section(TrainConfig, dict(raw.get("train", {})), "train")
    data = dict(raw.get("data", {}))
    for key in data:
        _require(key in {"dataset", "order", "dir", "registry"}, f"data.{key}", "unknown field")
    return RunConfig(
        model=model,
        train=train,
        dataset=data.get("dataset", "mnist"),
        order=data.get("order", ORDER_LEFT_RIGHT),
        data_dir=data.get("dir", "data"),
        out_dir=raw.get("out", "runs/default"),
        registry=data.get("registry"),
    )


def load_run_config(path: str | Path | None = None, **overrides: Any) -> RunConfig:
    """Load a run config from JSON and apply keyword overrides.

    Overrides: ``d``, ``n``, ``epochs``, ``seed`` (model/train fields) and
    ``dataset``, ``order``, ``data_dir``, ``out_dir``.  ``None`` values are
    ignored so CLI flags can be passed through unconditionally.
    """
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        cfg = run_config_from_dict(raw)
    else:
        cfg = RunConfig()

    model_kw: dict[str, Any] = {}
    if overrides.get("d") is not None:
        model_kw["d"] = overrides["d"]
        model_kw["n"] = None  # re-derive the cutoff unless explicitly overridden
    if overrides.get("n") is not None:
        model_kw["n"] = overrides["n"]
    if model_kw:
        cfg = replace(cfg, model=replace(cfg.model, **model_kw))
    train_kw = {k: overrides[k] for k in ("epochs", "seed") if overrides.get(k) is not None}
    if train_kw:
        cfg = replace(cfg, train=replace(cfg.train, **train_kw))
    run_kw = {k: overrides[k] for k in ("dataset", "order", "data_dir", "out_dir")
              if overrides.get(k) is not None}
    if run_kw:
        cfg = replace(cfg, **run_kw)
    return cfg
