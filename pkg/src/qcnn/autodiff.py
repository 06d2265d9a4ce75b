"""Array-level reverse-mode differentiation on a recording tape.

Operations act on ``Node`` objects (float64 ndarray values) and record
themselves on the innermost active ``GradientTape``.  Creation order is a
topological order of the graph, so ``backward`` just walks the recorded
nodes in reverse, accumulating adjoints.  Adjoints of watched parameters
that never participate in the output are zero.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class UsageError(RuntimeError):
    """Tape misuse, e.g. backward before any forward operation."""


_TAPE_STACK: list["GradientTape"] = []


class Node:
    __slots__ = ("value", "grad", "_backward_fn")

    def __init__(self, value, backward_fn: Callable[[np.ndarray], None] | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.value.shape})"


class GradientTape:
    """Records one forward pass; single-writer, scoped with ``with``."""

    def __init__(self) -> None:
        self._nodes: list[Node] = []
        self.watched: list[Node] = []

    def __enter__(self) -> "GradientTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def watch(self, array) -> Node:
        """Register a trainable parameter; its adjoint is reported by backward."""
        node = self._record(Node(array))
        self.watched.append(node)
        return node

    def _record(self, node: Node) -> Node:
        self._nodes.append(node)
        return node


def _active_tape() -> GradientTape:
    if not _TAPE_STACK:
        raise UsageError("no active GradientTape; wrap the forward pass in `with GradientTape() as tape:`")
    return _TAPE_STACK[-1]


def _record(value: np.ndarray, backward_fn: Callable[[np.ndarray], None] | None) -> Node:
    return _active_tape()._record(Node(value, backward_fn))


def _accumulate(node: Node, grad: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(tape: GradientTape, loss_seed: float = 1.0, output: Node | None = None) -> list[np.ndarray]:
    """Seed the output node and return one adjoint per watched parameter.

    ``output`` defaults to the last node the tape recorded (the loss of a
    full forward pass).  Parameters that do not reach the output get zero
    adjoints.
    """
    if not tape._nodes:
        raise UsageError("backward called before any forward operation was recorded")
    out = tape._nodes[-1] if output is None else output
    for node in tape._nodes:
        node.grad = None
    out.grad = np.broadcast_to(np.asarray(loss_seed, dtype=np.float64), out.value.shape).copy()
    for node in reversed(tape._nodes):
        if node.grad is None or node._backward_fn is None:
            continue
        node._backward_fn(node.grad)
    return [w.grad if w.grad is not None else np.zeros_like(w.value) for w in tape.watched]


def constant(value) -> Node:
    """A node that participates in the graph but receives no adjoint."""
    return _record(np.asarray(value, dtype=np.float64), None)


def add(a: Node, b: Node) -> Node:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))
    return _record(a.value + b.value, backward_fn)


def sub(a: Node, b: Node) -> Node:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(-g, b.value.shape))
    return _record(a.value - b.value, backward_fn)


def mul(a: Node, b: Node) -> Node:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))
    return _record(a.value * b.value, backward_fn)


def div(a: Node, b: Node) -> Node:
    def backward_fn(g):
        _accumulate(a, _unbroadcast(g / b.value, a.value.shape))
        _accumulate(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))
    return _record(a.value / b.value, backward_fn)


def sqrt(a: Node) -> Node:
    root = np.sqrt(a.value)

    def backward_fn(g):
        _accumulate(a, g * (0.5 / root))
    return _record(root, backward_fn)


def matmul(a: Node, w: Node, transpose_b: bool = False) -> Node:
    """``a @ w`` (or ``a @ w.T``) with 2-D ``w`` and any leading axes on ``a``."""
    wv = w.value
    if wv.ndim != 2:
        raise UsageError(f"matmul weight must be 2-D, got shape {wv.shape}")
    value = a.value @ (wv.T if transpose_b else wv)
    k_in = wv.shape[1] if transpose_b else wv.shape[0]
    k_out = wv.shape[0] if transpose_b else wv.shape[1]

    def backward_fn(g):
        _accumulate(a, g @ (wv if transpose_b else wv.T))
        flat_a = a.value.reshape(-1, k_in)
        flat_g = g.reshape(-1, k_out)
        dw = flat_g.T @ flat_a if transpose_b else flat_a.T @ flat_g
        _accumulate(w, dw)
    return _record(value, backward_fn)


def reduce_sum(a: Node, axis=None, keepdims: bool = False) -> Node:
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        gg = g
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            gg = np.expand_dims(g, tuple(ax % a.value.ndim for ax in axes))
        _accumulate(a, np.broadcast_to(gg, a.value.shape).copy())
    return _record(value, backward_fn)


def reduce_mean(a: Node, axis=None, keepdims: bool = False) -> Node:
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.value.shape[ax] for ax in axes]))
    value = a.value.mean(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        gg = g / count
        if axis is not None and not keepdims:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            gg = np.expand_dims(gg, tuple(ax % a.value.ndim for ax in axes))
        _accumulate(a, np.broadcast_to(gg, a.value.shape).copy())
    return _record(value, backward_fn)


def reshape(a: Node, shape) -> Node:
    def backward_fn(g):
        _accumulate(a, g.reshape(a.value.shape))
    return _record(a.value.reshape(shape), backward_fn)


def pool_pairs(a: Node) -> Node:
    """Elementwise product of adjacent site pairs along the second-to-last axis."""
    sites = a.value.shape[-2]
    if sites % 2 != 0:
        raise UsageError(f"pool_pairs needs an even site count, got {sites}")
    even = a.value[..., 0::2, :]
    odd = a.value[..., 1::2, :]

    def backward_fn(g):
        da = np.zeros_like(a.value)
        da[..., 0::2, :] = g * odd
        da[..., 1::2, :] = g * even
        _accumulate(a, da)
    return _record(even * odd, backward_fn)
