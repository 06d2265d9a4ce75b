"""Product-pooling convolutional classifier with an exact multilinear form.

A feature map is a float64 array of shape ``(batch, sites, channels)``; the
site count halves at every pooling.  Each depth level applies per-channel
batch normalization, a 1x1 convolution shared across sites, and an
elementwise product over adjacent site pairs.  Because the normalization is
affine, adding one constant channel turns the whole network into a stack of
plain matrices (one per level) contracted through product nodes; that stack
is exported by :meth:`Model.export_augmented_tensors` and drives both the
score contraction and the entanglement analysis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import basis
from .config import ModelConfig
from .linalg import ShapeError


def represent(x, config: ModelConfig) -> np.ndarray:
    """Embed pixels into basis channels: ``(batch, pixels) -> (batch, pixels, d0)``."""
    return basis.features(x, config.basis, config.n)


@dataclass
class BatchNorm:
    """Per-channel normalization to a learnable mean/scale.

    ``scale``/``shift`` are the learnables; running statistics (exponential
    moving average, unbiased variance) serve evaluation mode.
    """

    scale: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, eps: float = 1e-5, momentum: float = 0.1) -> "BatchNorm":
        return cls(scale=np.ones(channels), shift=np.zeros(channels),
                   running_mean=np.zeros(channels), running_var=np.ones(channels),
                   eps=eps, momentum=momentum)

    @property
    def channels(self) -> int:
        return self.scale.shape[0]

    def _check(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[-1] != self.channels:
            raise ShapeError(f"batchnorm expects (batch, sites, {self.channels}), got {x.shape}")

    def forward(self, x: np.ndarray, mode: str = "eval") -> np.ndarray:
        self._check(x)
        if mode == "train":
            mean = x.mean(axis=(0, 1))
            var = x.var(axis=(0, 1))
            self._update_running(mean, var, x.shape[0] * x.shape[1])
        elif mode == "eval":
            mean, var = self.running_mean, self.running_var
        else:
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        return self.scale * (x - mean) / np.sqrt(var + self.eps) + self.shift

    def forward_graph(self, x: ad.Node, scale: ad.Node, shift: ad.Node) -> ad.Node:
        """Train-mode forward on the tape; updates running statistics."""
        self._check(x.value)
        mean = ad.reduce_mean(x, axis=(0, 1))
        centered = ad.sub(x, mean)
        var = ad.reduce_mean(ad.mul(centered, centered), axis=(0, 1))
        denom = ad.sqrt(ad.add(var, ad.constant(self.eps)))
        normalized = ad.div(centered, denom)
        out = ad.add(ad.mul(normalized, scale), shift)
        self._update_running(mean.value, var.value, x.value.shape[0] * x.value.shape[1])
        return out

    def _update_running(self, mean: np.ndarray, var: np.ndarray, count: int) -> None:
        if count > 1:
            var = var * (count / (count - 1.0))
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var

    def eval_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """The (weight, bias) of the evaluation-mode per-channel affine map."""
        w = self.scale / np.sqrt(self.running_var + self.eps)
        z = self.shift - self.running_mean * w
        return w, z


def conv1x1(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Apply one ``(out, in)`` matrix at every site (weight sharing)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"conv weight {weight.shape} does not accept {x.shape[-1]} channels")
    return x @ weight.T


def product_pool(x: np.ndarray) -> np.ndarray:
    """Same-channel product over non-overlapping site pairs; halves the sites."""
    if x.shape[-2] % 2 != 0:
        raise ShapeError(f"product_pool needs an even site count, got {x.shape[-2]}")
    return x[..., 0::2, :] * x[..., 1::2, :]


def classify(scores: np.ndarray) -> np.ndarray:
    """Predicted label: argmax of |score|, ties to the lowest index."""
    arr = np.asarray(scores, dtype=np.float64)
    return np.argmax(np.abs(arr), axis=-1)


def squared_distance_loss(scores: np.ndarray, labels: np.ndarray) -> float:
    """Batch-mean squared distance between scores and the one-hot target."""
    arr = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    target = np.zeros_like(arr)
    target[np.arange(arr.shape[0]), lab] = 1.0
    return float(((arr - target) ** 2).sum() / arr.shape[0])


@dataclass(frozen=True)
class AugmentedTensors:
    """The per-level matrices of the exact multilinear network description.

    ``mats[l]`` for l < L has shape ``(d_{l+1}+1, d_l+1)`` and its first row
    is (1, 0, ..., 0) so the constant channel survives every level; the last
    entry maps the top augmented feature to the class scores and carries no
    constant row.
    """

    mats: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.mats) < 2:
            raise ShapeError("need at least one level matrix plus the classifier row map")
        for l, m in enumerate(self.mats[:-1]):
            expected = np.zeros(m.shape[1])
            expected[0] = 1.0
            if not np.array_equal(m[0], expected):
                raise ValueError(f"level {l}: first row must be (1, 0, ..., 0)")
            if l + 1 < len(self.mats) and self.mats[l + 1].shape[1] != m.shape[0]:
                raise ShapeError(f"level {l + 1} expects {m.shape[0]} inputs, "
                                 f"got {self.mats[l + 1].shape[1]}")

    @property
    def levels(self) -> int:
        return len(self.mats) - 1

    @property
    def local_dim(self) -> int:
        return self.mats[0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.mats[-1].shape[0]

    def level(self, l: int) -> np.ndarray:
        return self.mats[l]


class Model:
    """Parameter container plus the forward passes (plain and on-tape)."""

    def __init__(self, config: ModelConfig, convs: list[np.ndarray], bns: list[BatchNorm]):
        schedule = config.channel_schedule
        L = config.levels
        if len(convs) != L + 1 or len(bns) != L + 1:
            raise ShapeError(f"need {L + 1} conv matrices and batchnorm layers")
        for l in range(L):
            if convs[l].shape != (schedule[l + 1], schedule[l]):
                raise ShapeError(f"conv {l}: expected {(schedule[l + 1], schedule[l])}, "
                                 f"got {convs[l].shape}")
        if convs[L].shape != (config.num_classes, schedule[L]):
            raise ShapeError(f"classifier: expected {(config.num_classes, schedule[L])}, "
                             f"got {convs[L].shape}")
        self.config = config
        self.convs = convs
        self.bns = bns

    def trainables(self) -> Iterator[tuple[str, np.ndarray]]:
        """Trainable arrays in a fixed order (the optimizer relies on it)."""
        for l, w in enumerate(self.convs):
            yield f"conv{l}.weight", w
        for l, bn in enumerate(self.bns):
            yield f"bn{l}.scale", bn.scale
            yield f"bn{l}.shift", bn.shift

    def set_trainables(self, arrays: list[np.ndarray]) -> None:
        names = [name for name, _ in self.trainables()]
        if len(arrays) != len(names):
            raise ShapeError(f"expected {len(names)} arrays, got {len(arrays)}")
        L = self.config.levels
        for l in range(L + 1):
            self.convs[l] = np.asarray(arrays[l], dtype=np.float64)
        for l in range(L + 1):
            self.bns[l].scale = np.asarray(arrays[L + 1 + 2 * l], dtype=np.float64)
            self.bns[l].shift = np.asarray(arrays[L + 2 + 2 * l], dtype=np.float64)

    def forward(self, x, mode: str = "eval") -> np.ndarray:
        """Scores of shape ``(batch, num_classes)`` for pixels ``(batch, N)``."""
        arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if arr.shape[1] != self.config.n_pixels:
            raise ShapeError(f"expected {self.config.n_pixels} pixels per sample, got {arr.shape[1]}")
        z = represent(arr, self.config)
        for l in range(self.config.levels):
            z = self.bns[l].forward(z, mode)
            z = conv1x1(z, self.convs[l])
            z = product_pool(z)
        z = self.bns[-1].forward(z, mode)
        return z[:, 0, :] @ self.convs[-1].T

    def forward_graph(self, tape: ad.GradientTape, x: np.ndarray) -> ad.Node:
        """Train-mode forward on the tape; watches every trainable in order."""
        conv_nodes = [tape.watch(w) for w in self.convs]
        bn_nodes = []
        for bn in self.bns:
            bn_nodes.append((tape.watch(bn.scale), tape.watch(bn.shift)))
        z = ad.constant(represent(x, self.config))
        for l in range(self.config.levels):
            z = self.bns[l].forward_graph(z, *bn_nodes[l])
            z = ad.matmul(z, conv_nodes[l], transpose_b=True)
            z = ad.pool_pairs(z)
        z = self.bns[-1].forward_graph(z, *bn_nodes[-1])
        z = ad.reshape(z, (z.value.shape[0], z.value.shape[-1]))
        return ad.matmul(z, conv_nodes[-1], transpose_b=True)

    def loss_graph(self, tape: ad.GradientTape, x: np.ndarray, labels: np.ndarray
                   ) -> tuple[ad.Node, ad.Node]:
        scores = self.forward_graph(tape, x)
        target = np.zeros_like(scores.value)
        target[np.arange(target.shape[0]), np.asarray(labels)] = 1.0
        diff = ad.sub(scores, ad.constant(target))
        total = ad.reduce_sum(ad.mul(diff, diff))
        loss = ad.mul(total, ad.constant(1.0 / target.shape[0]))
        return loss, scores

    def export_augmented_tensors(self) -> AugmentedTensors:
        """Exact matrix stack absorbing evaluation-mode normalization.

        For every level and feature vector v, ``(1, a @ (w*v + z))`` equals
        the exported matrix applied to ``(1, v)``.
        """
        mats: list[np.ndarray] = []
        L = self.config.levels
        for l in range(L):
            w, z = self.bns[l].eval_affine()
            a = self.convs[l]
            block = np.concatenate([(a @ z)[:, np.newaxis], a * w], axis=1)
            top = np.zeros((1, block.shape[1]))
            top[0, 0] = 1.0
            mats.append(np.vstack([top, block]))
        w, z = self.bns[-1].eval_affine()
        a = self.convs[-1]
        mats.append(np.concatenate([(a @ z)[:, np.newaxis], a * w], axis=1))
        return AugmentedTensors(tuple(mats))

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = dict(self.trainables())
        for l, bn in enumerate(self.bns):
            out[f"bn{l}.running_mean"] = bn.running_mean
            out[f"bn{l}.running_var"] = bn.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        L = self.config.levels
        flat = [arrays[f"conv{l}.weight"] for l in range(L + 1)]
        for l in range(L + 1):
            flat.append(arrays[f"bn{l}.scale"])
            flat.append(arrays[f"bn{l}.shift"])
        self.set_trainables(flat)
        for l, bn in enumerate(self.bns):
            bn.running_mean = np.asarray(arrays[f"bn{l}.running_mean"], dtype=np.float64)
            bn.running_var = np.asarray(arrays[f"bn{l}.running_var"], dtype=np.float64)


def init_model(config: ModelConfig, seed: int) -> Model:
    """Fresh parameters: uniform conv entries within the fan-in bound,
    identity normalization, unit running variance.  Fully seed-determined."""
    rng = np.random.default_rng(seed)
    schedule = config.channel_schedule
    widths = list(schedule) + [config.num_classes]
    convs = []
    for l in range(config.levels + 1):
        bound = np.sqrt(1.0 / schedule[l])
        convs.append(rng.uniform(-bound, bound, size=(widths[l + 1], widths[l])))
    bns = [BatchNorm.create(schedule[l], config.bn_epsilon, config.bn_momentum)
           for l in range(config.levels + 1)]
    return Model(config, convs, bns)


def param_count(config: ModelConfig) -> int:
    """Trainable scalars: conv products plus two normalization vectors per level."""
    widths = list(config.channel_schedule) + [config.num_classes]
    return sum(widths[l] * widths[l + 1] + 2 * widths[l] for l in range(config.levels + 1))
