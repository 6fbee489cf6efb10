"""RMSProp and Adam over lists of parameter tensors.

RMSProp keeps ``v <- decay*v + (1-decay)*g**2`` and steps
``p <- p - lr*g/(sqrt(v) + eps)``, with eps outside the square root.
Adam uses the usual bias-corrected moments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import NumericalError, Tensor


@dataclass
class OptimizerState:
    accumulators: dict[str, list[np.ndarray]] = field(default_factory=dict)
    step: int = 0


class Optimizer:
    name = "base"

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.clip_norm = clip_norm
        self.state = OptimizerState()

    def _prepare(self, grads: Sequence[np.ndarray] | None) -> list[np.ndarray]:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ValueError(f"{self.name}: got {len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"{self.name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.isfinite(g).all():
                raise NumericalError(f"{self.name}_step")
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads))
            if norm > self.clip_norm:
                grads = [g * (self.clip_norm / norm) for g in grads]
        return grads

    def step(self, grads: Sequence[np.ndarray] | None = None) -> None:
        """Apply one update using ``grads`` or, if omitted, each parameter's ``.grad``."""
        grads = self._prepare(grads)
        self.state.step += 1
        self._update(grads)

    def _update(self, grads: list[np.ndarray]) -> None:
        raise NotImplementedError


class RMSProp(Optimizer):
    name = "rmsprop"

    def __init__(self, params, lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-8, clip_norm=None):
        super().__init__(params, lr, clip_norm)
        self.decay = decay
        self.eps = eps
        self.state.accumulators["v"] = [np.zeros_like(p.data) for p in self.params]

    def _update(self, grads):
        for p, g, v in zip(self.params, grads, self.state.accumulators["v"]):
            v *= self.decay
            v += (1.0 - self.decay) * g * g
            p.data -= self.lr * g / (np.sqrt(v) + self.eps)


class Adam(Optimizer):
    name = "adam"

    def __init__(
        self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, clip_norm=None
    ):
        super().__init__(params, lr, clip_norm)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state.accumulators["m"] = [np.zeros_like(p.data) for p in self.params]
        self.state.accumulators["v"] = [np.zeros_like(p.data) for p in self.params]

    def _update(self, grads):
        t = self.state.step
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        acc = self.state.accumulators
        for p, g, m, v in zip(self.params, grads, acc["m"], acc["v"]):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


OPTIMIZERS = {"rmsprop": RMSProp, "adam": Adam}


def make_optimizer(name: str, params, lr: float = 1e-3, clip_norm: float | None = None) -> Optimizer:
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; expected one of {sorted(OPTIMIZERS)}") from None
    return cls(params, lr=lr, clip_norm=clip_norm)
