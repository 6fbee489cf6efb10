"""Convolutional mixture density recurrent network for next-location prediction.

Each RSSI vector in a window passes through a feature detector (1-D CNN by
default), the per-step features drive a recurrent cell from a zero state, and
the last hidden state parameterizes a Gaussian mixture over the next position.

The recurrence feeds back the previous hidden state (``h_t = act(W f_t + U
h_{t-1} + b)``), not the previous output.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint, mdn
from .autodiff import NumericalError, Tensor
from .data import InputScaler, PathWindow, TargetScaler, stack_windows
from .layers import Conv1d, Dense, Flatten, MaxPool1d, Module, Sequential, make_cell, mse_loss
from .optim import make_optimizer
from .rng import Streams

log = logging.getLogger(__name__)

VARIANTS = {
    "rnn-only": dict(front_end="none", head="mse", rnn="vanilla"),
    "cnn+rnn": dict(front_end="cnn", head="mse", rnn="vanilla"),
    "rnn+mdn": dict(front_end="none", head="mdn", rnn="vanilla"),
    "ae+rnn+mdn": dict(front_end="ae", head="mdn", rnn="vanilla"),
    "cmdrnn": dict(front_end="cnn", head="mdn", rnn="vanilla"),
    "cmdlstm": dict(front_end="cnn", head="mdn", rnn="lstm"),
    "cmdgru": dict(front_end="cnn", head="mdn", rnn="gru"),
}


class TrainingDiverged(NumericalError):
    def __init__(self, op: str, epoch: int, batch: int):
        FloatingPointError.__init__(
            self, f"non-finite value in '{op}' at epoch {epoch}, batch {batch}; try a lower learning rate"
        )
        self.op, self.epoch, self.batch = op, epoch, batch


@dataclass
class CmdrnnConfig:
    input_dim: int
    filters: int = 100
    kernel: int = 5
    stride: int = 2
    pool: int = 2
    feature_units: int = 100
    rnn: str = "vanilla"
    hidden: int = 200
    mdn_hidden: int = 200
    memory: int = 5
    mixtures: int = 30
    front_end: str = "cnn"
    head: str = "mdn"
    ae_layers: tuple[int, ...] = (256, 128, 64)
    ae_epochs: int = 50
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    clip_norm: float | None = None
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.ae_layers = tuple(self.ae_layers)
        self.validate()

    def validate(self) -> None:
        if self.memory < 1 or self.mixtures < 1 or self.hidden < 1:
            raise ValueError("memory length, mixture count and hidden width must be >= 1")
        if self.front_end not in ("cnn", "none", "ae"):
            raise ValueError(f"unknown front end {self.front_end!r}")
        if self.head not in ("mdn", "mse"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.rnn not in ("vanilla", "lstm", "gru"):
            raise ValueError(f"unknown rnn kind {self.rnn!r}")
        if self.front_end == "cnn" and self.kernel > self.input_dim:
            raise ValueError(f"kernel width {self.kernel} exceeds input dimension {self.input_dim}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be >= 1 and epochs >= 0")

    @classmethod
    def for_variant(cls, kind: str, input_dim: int, **overrides) -> "CmdrnnConfig":
        if kind not in VARIANTS:
            raise ValueError(f"unknown variant {kind!r}; expected one of {sorted(VARIANTS)}")
        return cls(input_dim=input_dim, **{**VARIANTS[kind], **overrides})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ae_layers"] = list(self.ae_layers)
        return d


class Autoencoder(Module):
    """Dense autoencoder; ``encode`` stops at the code layer."""

    def __init__(self, input_dim: int, widths: Sequence[int], rng: np.random.Generator):
        dims = [input_dim, *widths]
        enc = [Dense(a, b, "relu" if i < len(widths) - 1 else "linear", rng) for i, (a, b) in enumerate(zip(dims, dims[1:]))]
        back = dims[::-1]
        dec = [Dense(a, b, "relu" if i < len(widths) - 1 else "linear", rng) for i, (a, b) in enumerate(zip(back, back[1:]))]
        self.encoder = Sequential(*enc)
        self.decoder = Sequential(*dec)

    @property
    def code_size(self) -> int:
        return self.encoder.layers[-1].weight.shape[1]

    def encode(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def forward(self, x: Tensor) -> Tensor:
        return self.decoder(self.encoder(x))


class CNNFeatures(Module):
    """conv (sigmoid) -> max-pool (ReLU) -> flatten -> dense (sigmoid)."""

    def __init__(self, cfg: CmdrnnConfig, rng: np.random.Generator):
        self.conv = Conv1d(1, cfg.filters, cfg.kernel, cfg.stride, "sigmoid", rng)
        self.pool = MaxPool1d(cfg.pool, cfg.pool, "relu")
        self.conv_length = self.conv.out_length(cfg.input_dim)
        if cfg.pool > self.conv_length:
            raise ValueError(f"pool width {cfg.pool} exceeds conv output length {self.conv_length}")
        self.pooled_length = self.pool.out_length(self.conv_length)
        self.flatten = Flatten()
        self.project = Dense(self.pooled_length * cfg.filters, cfg.feature_units, "sigmoid", rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x.reshape(x.shape[0], x.shape[1], 1)
        return self.project(self.flatten(self.pool(self.conv(x))))


class Cmdrnn(Module):
    def __init__(self, cfg: CmdrnnConfig):
        self.cfg = cfg
        streams = Streams(cfg.seed)
        rng = streams["weight-init"]
        self.ae = None
        self.cnn = None
        if cfg.front_end == "cnn":
            self.cnn = CNNFeatures(cfg, rng)
            feat = cfg.feature_units
        elif cfg.front_end == "ae":
            self.ae = Autoencoder(cfg.input_dim, cfg.ae_layers, rng)
            feat = self.ae.code_size
        else:
            feat = cfg.input_dim
        self.cell = make_cell(cfg.rnn, feat, cfg.hidden, rng)
        if cfg.head == "mdn":
            self.head = Sequential(Dense(cfg.hidden, cfg.mdn_hidden, "leaky-relu", rng), Dense(cfg.mdn_hidden, 5 * cfg.mixtures, "linear", rng))
        else:
            self.head = Sequential(Dense(cfg.hidden, 2, "linear", rng))
        self.scaler: TargetScaler | None = None
        self.input_scaler: InputScaler | None = None

    @property
    def output_width(self) -> int:
        return self.head.layers[-1].weight.shape[1]

    def trainable_parameters(self) -> list[Tensor]:
        frozen = set() if self.ae is None else {id(p) for p in self.ae.parameters()}
        return [p for p in self.parameters() if id(p) not in frozen]

    def features(self, x: Tensor) -> Tensor:
        if self.cnn is not None:
            return self.cnn(x)
        if self.ae is not None:
            return self.ae.encode(x)
        return x

    def forward(self, windows: np.ndarray) -> Tensor:
        """Raw head output for windows shaped (batch, L, WAPs)."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        batch, length, dim = windows.shape
        if length != self.cfg.memory:
            raise ValueError(f"window length {length} != memory length {self.cfg.memory}")
        if dim != self.cfg.input_dim:
            raise ad.ShapeError(f"window has {dim} WAPs, model expects {self.cfg.input_dim}")
        flat = windows.reshape(batch * length, dim)
        if self.input_scaler is not None:
            flat = self.input_scaler.transform(flat)
        feats = self.features(Tensor(flat))
        feats = feats.reshape(batch, length, -1)
        state = self.cell.initial_state(batch)
        for t in range(length):
            state = self.cell.step(feats[:, t, :], state)
        return self.head(self.cell.output(state))

    def loss(self, windows: np.ndarray, targets: np.ndarray) -> Tensor:
        out = self.forward(windows)
        if self.cfg.head == "mdn":
            return mdn.nll(out, targets)
        return mse_loss(out, targets)

    def predict_next(self, windows: np.ndarray) -> mdn.MixtureParams:
        if self.cfg.head != "mdn":
            raise ValueError("predict_next needs a mixture head; use predict_point")
        was_training = self.training
        self.eval()
        try:
            return mdn.params_from_logits(self.forward(windows))
        finally:
            self.train(was_training)

    def predict_point(self, windows: np.ndarray, mode: str = "mean", rng: np.random.Generator | None = None) -> np.ndarray:
        """Point predictions (batch, 2) in training units: mixture mean, one mixture sample, or the direct output."""
        if self.cfg.head == "mse":
            return self.forward(windows).data
        params = self.predict_next(windows)
        if mode == "mean":
            return mdn.mixture_mean(params)
        if mode == "sample":
            return mdn.sample(params, rng if rng is not None else Streams(self.cfg.seed)["mixture-sampling"])
        raise ValueError(f"unknown prediction mode {mode!r}")

    # --- persistence ------------------------------------------------------

    def save(self, path, **extra) -> None:
        checkpoint.save(
            path,
            "cmdrnn",
            self.cfg.to_dict(),
            {"model": self.state_dict()},
            self.scaler,
            self.cfg.seed,
            input_scaler=None if self.input_scaler is None else self.input_scaler.to_dict(),
            **extra,
        )

    @classmethod
    def load(cls, path) -> "Cmdrnn":
        doc = checkpoint.load(path, "cmdrnn")
        model = cls(CmdrnnConfig(**doc["config"]))
        model.load_state_dict(doc["params"]["model"])
        if doc["scaler"] is not None:
            model.scaler = TargetScaler.from_dict(doc["scaler"])
        if doc.get("input_scaler"):
            model.input_scaler = InputScaler.from_dict(doc["input_scaler"])
        return model


def build(cfg: CmdrnnConfig) -> Cmdrnn:
    return Cmdrnn(cfg)


def ablation_variant(kind: str, input_dim: int, **overrides) -> Cmdrnn:
    return Cmdrnn(CmdrnnConfig.for_variant(kind, input_dim, **overrides))


@dataclass
class TrainingTrace:
    epoch_loss: list[float] = field(default_factory=list)
    pretrain_loss: list[float] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain_autoencoder(model: Cmdrnn, rssi: np.ndarray, epochs: int, trace: TrainingTrace) -> None:
    """Fit the autoencoder front end by reconstruction MSE; it stays frozen afterwards."""
    cfg = model.cfg
    rng = Streams(cfg.seed)["ae-batches"]
    params = model.ae.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.clip_norm)
    for epoch in range(epochs):
        total = 0.0
        for b, idx in enumerate(_batches(len(rssi), cfg.batch_size, rng)):
            x = Tensor(rssi[idx])
            try:
                loss = mse_loss(model.ae(x), x)
            except NumericalError as exc:
                raise TrainingDiverged(exc.op, epoch, b) from None
            ad.backward(loss, params)
            opt.step()
            total += loss.item() * len(idx)
        trace.pretrain_loss.append(total / len(rssi))


def train(
    model: Cmdrnn,
    windows: Sequence[PathWindow] | tuple[np.ndarray, np.ndarray],
    epochs: int | None = None,
    optimizer: str | None = None,
    callback=None,
) -> TrainingTrace:
    """Minibatch training by backpropagation through the unrolled window.

    Fits the per-WAP input standardizer on the training windows if the model
    has none. Every window starts from a zero hidden state. Returns per-epoch mean loss
    (NLL for mixture heads, MSE otherwise).
    """
    cfg = model.cfg
    epochs = cfg.epochs if epochs is None else epochs
    X, Y = windows if isinstance(windows, tuple) else stack_windows(windows)
    if len(X) == 0:
        raise ValueError("empty training set")
    if X.shape[1] != cfg.memory:
        raise ValueError(f"windows have length {X.shape[1]}, model memory is {cfg.memory}")
    trace = TrainingTrace()
    if epochs == 0:
        return trace
    streams = Streams(cfg.seed)
    if model.input_scaler is None:
        model.input_scaler = InputScaler.fit(X)
    if model.ae is not None:
        rows = model.input_scaler.transform(X.reshape(-1, X.shape[-1]))
        pretrain_autoencoder(model, rows, cfg.ae_epochs, trace)
    params = model.trainable_parameters()
    opt = make_optimizer(optimizer or cfg.optimizer, params, cfg.lr, cfg.clip_norm)
    rng = streams["batch-order"]
    model.train()
    for epoch in range(epochs):
        total = 0.0
        for b, idx in enumerate(_batches(len(X), cfg.batch_size, rng)):
            try:
                loss = model.loss(X[idx], Y[idx])
                ad.backward(loss, params)
                opt.step()
            except NumericalError as exc:
                raise TrainingDiverged(exc.op, epoch, b) from None
            total += loss.item() * len(idx)
        trace.epoch_loss.append(total / len(X))
        if callback is not None:
            callback(epoch, trace.epoch_loss[-1])
    model.eval()
    return trace
