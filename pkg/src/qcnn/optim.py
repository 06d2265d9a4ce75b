"""AdamW with decoupled weight decay, and the step-halving schedule."""
from __future__ import annotations

import numpy as np

from .config import TrainConfig


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Base rate halved once per configured period of epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.learning_rate * 0.5 ** (epoch // config.lr_half_period)


class AdamW:
    """Adam moments with bias correction plus decay applied directly to the
    parameters (not folded into the gradient)."""

    def __init__(self, shapes: list[tuple[int, ...]], weight_decay: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        """Update every parameter in place."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError(f"expected {len(self.m)} parameter/gradient arrays")
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - self.beta1 ** t
        bias2 = 1.0 - self.beta2 ** t
        for theta, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            theta *= 1.0 - lr * self.weight_decay
            theta -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay, "step_count": self.step_count,
            "m": [a.copy() for a in self.m], "v": [a.copy() for a in self.v],
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "AdamW":
        opt = cls([a.shape for a in state["m"]], weight_decay=state["weight_decay"],
                  beta1=state["beta1"], beta2=state["beta2"], eps=state["eps"])
        opt.step_count = int(state["step_count"])
        opt.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        opt.v = [np.array(a, dtype=np.float64) for a in state["v"]]
        return opt


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamW,
               lr: float) -> None:
    """Functional spelling of :meth:`AdamW.step` (updates in place)."""
    state.step(params, grads, lr)
