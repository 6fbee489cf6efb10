"""Differentiable layers built on :mod:`probloc.autodiff`.

Signals are laid out as ``(batch, length, channels)``; dense layers act on the
last axis. Dense weights are stored as ``(fan_in, fan_out)`` so the forward
pass is ``x @ W + b``.
"""

from __future__ import annotations

from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LEAKY_SLOPE = 0.01


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base class: parameters are discovered from attributes in definition order."""

    training = True

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        found: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                found[name] = value
            elif isinstance(value, Module):
                found.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.named_parameters(f"{name}.{i}."))
        return found

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ad.ShapeError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data[...] = value

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng: np.random.Generator | None = None):
        if n_in < 1 or n_out < 1:
            raise ValueError("dense extents must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.weight = ad.parameter(glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = ad.parameter(np.zeros(n_out))
        self.activation = activation
        self._act = ad.activation(activation)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ad.ShapeError(f"dense: expected {self.weight.shape[0]} input features, got {x.shape[-1]}")
        return self._act(x @ self.weight + self.bias)


class Conv1d(Module):
    def __init__(
        self,
        channels_in: int,
        filters: int,
        kernel: int,
        stride: int = 1,
        activation: str = "linear",
        rng: np.random.Generator | None = None,
    ):
        if min(channels_in, filters, kernel, stride) < 1:
            raise ValueError("conv1d extents and stride must be >= 1")
        rng = rng or np.random.default_rng(0)
        fan_in, fan_out = kernel * channels_in, kernel * filters
        self.filters = ad.parameter(glorot_uniform(rng, (filters, kernel, channels_in), fan_in, fan_out))
        self.bias = ad.parameter(np.zeros(filters))
        self.stride = stride
        self.activation = activation
        self._act = ad.activation(activation)

    def out_length(self, length: int) -> int:
        return ad.conv1d_out_length(length, self.filters.shape[1], self.stride)

    def forward(self, x: Tensor) -> Tensor:
        return self._act(ad.conv1d(x, self.filters, self.bias, self.stride))


class MaxPool1d(Module):
    """Max pooling; ``activation`` is applied to the pooled output."""

    def __init__(self, width: int = 2, stride: int = 2, activation: str = "linear"):
        if width < 1 or stride < 1:
            raise ValueError("pool width and stride must be >= 1")
        self.width = width
        self.stride = stride
        self.activation = activation
        self._act = ad.activation(activation)

    def out_length(self, length: int) -> int:
        return ad.conv1d_out_length(length, self.width, self.stride)

    def forward(self, x: Tensor) -> Tensor:
        return self._act(ad.maxpool1d(x, self.width, self.stride))


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) so E[output] = input."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.training, self.rng)


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


# --- recurrent cells ----------------------------------------------------------
#
# All cells expose ``initial_state(batch)``, ``step(x, state) -> state`` and
# ``output(state) -> h``.
#
# vanilla:  h' = act(x W + h U + b)
# LSTM:     i, f, o = sigmoid(.), g = tanh(.)  over x W + h U + b split in four
#           c' = f*c + i*g;  h' = o * tanh(c')
# GRU:      z = sigmoid(x Wz + h Uz + bz);  r = sigmoid(x Wr + h Ur + br)
#           n = tanh(x Wn + (r*h) Un + bn);  h' = (1 - z)*n + z*h


def _recurrent_init(rng: np.random.Generator, shape, hidden: int) -> np.ndarray:
    limit = 1.0 / np.sqrt(hidden)
    return rng.uniform(-limit, limit, size=shape)


class RNNCell(Module):
    def __init__(self, n_in: int, hidden: int, activation: str = "sigmoid", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.W = ad.parameter(glorot_uniform(rng, (n_in, hidden), n_in, hidden))
        self.U = ad.parameter(_recurrent_init(rng, (hidden, hidden), hidden))
        self.b = ad.parameter(np.zeros(hidden))
        self.activation = activation
        self._act = ad.activation(activation)

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return self._act(x @ self.W + h @ self.U + self.b)

    def output(self, state: Tensor) -> Tensor:
        return state


class LSTMCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.W = ad.parameter(glorot_uniform(rng, (n_in, 4 * hidden), n_in, hidden))
        self.U = ad.parameter(_recurrent_init(rng, (hidden, 4 * hidden), hidden))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.b = ad.parameter(b)

    def initial_state(self, batch: int) -> tuple[Tensor, Tensor]:
        zeros = np.zeros((batch, self.hidden))
        return Tensor(zeros), Tensor(zeros.copy())

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        n = self.hidden
        gates = x @ self.W + h @ self.U + self.b
        i = ad.sigmoid(gates[..., :n])
        f = ad.sigmoid(gates[..., n : 2 * n])
        o = ad.sigmoid(gates[..., 2 * n : 3 * n])
        g = ad.tanh(gates[..., 3 * n :])
        c_next = f * c + i * g
        return o * ad.tanh(c_next), c_next

    def output(self, state: tuple[Tensor, Tensor]) -> Tensor:
        return state[0]


class GRUCell(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.hidden = hidden
        self.W = ad.parameter(glorot_uniform(rng, (n_in, 3 * hidden), n_in, hidden))
        self.U_zr = ad.parameter(_recurrent_init(rng, (hidden, 2 * hidden), hidden))
        self.U_n = ad.parameter(_recurrent_init(rng, (hidden, hidden), hidden))
        self.b = ad.parameter(np.zeros(3 * hidden))

    def initial_state(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        n = self.hidden
        xw = x @ self.W + self.b
        zr = ad.sigmoid(xw[..., : 2 * n] + h @ self.U_zr)
        z, r = zr[..., :n], zr[..., n:]
        cand = ad.tanh(xw[..., 2 * n :] + (r * h) @ self.U_n)
        return (1.0 - z) * cand + z * h

    def output(self, state: Tensor) -> Tensor:
        return state


CELLS = {"vanilla": RNNCell, "lstm": LSTMCell, "gru": GRUCell}


def make_cell(kind: str, n_in: int, hidden: int, rng: np.random.Generator | None = None) -> Module:
    if kind not in CELLS:
        raise ValueError(f"unknown rnn kind {kind!r}; expected one of {sorted(CELLS)}")
    return CELLS[kind](n_in, hidden, rng=rng)


def unroll(cell: Module, steps: Sequence[Tensor]) -> Tensor:
    """Run ``cell`` over ``steps`` from a zero state and return the last hidden vector."""
    state = cell.initial_state(steps[0].shape[0])
    for x in steps:
        state = cell.step(x, state)
    return cell.output(state)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean over the batch of the squared Euclidean error."""
    target = ad.as_tensor(target)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    if pred.shape[0] == 0:
        raise ValueError("mse_loss: empty batch")
    diff = pred - target
    per_sample = ad.square(diff).reshape(pred.shape[0], -1).sum(axis=1)
    return per_sample.mean()
