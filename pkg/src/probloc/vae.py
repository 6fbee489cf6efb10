"""VAE-based semi-supervised location recognition.

Phase one fits a Gaussian-latent VAE on every available fingerprint. Phase
two freezes the encoder and trains a predictor on the labeled subset:

* M1 maps the posterior mean ``mu_z`` to a position and is trained by MSE.
* M2 maps a posterior draw ``z`` (optionally alongside ``mu_z``) to a
  position, trained by the Gaussian likelihood ``|y - f|^2 / (2 sigma_y^2)``
  with a fresh draw each step; predictions average ``S`` draws.

The decoder likelihood is a unit-variance Gaussian, so the reconstruction
term is ``0.5 * |x - x'|^2`` (constant dropped).
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import NumericalError, Tensor
from .data import Dataset, InputScaler, TargetScaler
from .layers import Dense, Dropout, Module, Sequential, mse_loss
from .optim import make_optimizer
from .rng import Streams


class TrainingDiverged(NumericalError):
    def __init__(self, phase: str, op: str, epoch: int, batch: int):
        FloatingPointError.__init__(
            self, f"non-finite value in '{op}' during {phase}, epoch {epoch}, batch {batch}; try a lower learning rate"
        )
        self.op, self.phase, self.epoch, self.batch = op, phase, epoch, batch


@dataclass
class VaeConfig:
    input_dim: int
    encoder_hidden: tuple[int, ...] = (512, 512)
    latent_dim: int = 5
    decoder_hidden: tuple[int, ...] = (512,)
    predictor_hidden: tuple[int, ...] = (512, 512, 512)
    dropout: float = 0.3
    optimizer: str = "adam"
    lr: float = 1e-3
    sigma_y: float = 0.1
    samples: int = 50
    m2_input: str = "z+mu"
    vae_epochs: int = 100
    predictor_epochs: int = 100
    predictor_steps: int | None = None
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        self.predictor_hidden = tuple(self.predictor_hidden)
        if self.latent_dim < 1:
            raise ValueError("latent dimension must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.sigma_y <= 0:
            raise ValueError("sigma_y must be positive")
        if self.samples < 1:
            raise ValueError("sample count must be >= 1")
        if self.m2_input not in ("z+mu", "z"):
            raise ValueError(f"m2_input must be 'z+mu' or 'z', got {self.m2_input!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("encoder_hidden", "decoder_hidden", "predictor_hidden"):
            d[key] = list(d[key])
        return d


@dataclass(frozen=True)
class LatentGaussian:
    mu: np.ndarray
    sigma: np.ndarray


def _mlp(widths: Sequence[int], rng, activation="relu") -> list[Module]:
    return [Dense(a, b, activation, rng) for a, b in zip(widths, widths[1:])]


class Encoder(Module):
    def __init__(self, cfg: VaeConfig, rng):
        dims = [cfg.input_dim, *cfg.encoder_hidden]
        self.body = Sequential(*_mlp(dims, rng))
        self.mu = Dense(dims[-1], cfg.latent_dim, "linear", rng)
        self.log_sigma = Dense(dims[-1], cfg.latent_dim, "linear", rng)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.body(x)
        return self.mu(h), self.log_sigma(h)


class Decoder(Module):
    def __init__(self, cfg: VaeConfig, rng):
        dims = [cfg.latent_dim, *cfg.decoder_hidden]
        self.body = Sequential(*_mlp(dims, rng), Dense(dims[-1], cfg.input_dim, "linear", rng))

    def forward(self, z: Tensor) -> Tensor:
        return self.body(z)


class Predictor(Module):
    def __init__(self, n_in: int, cfg: VaeConfig, rng, dropout_rng):
        layers: list[Module] = []
        dims = [n_in, *cfg.predictor_hidden]
        for a, b in zip(dims, dims[1:]):
            layers += [Dense(a, b, "relu", rng), Dropout(cfg.dropout, dropout_rng)]
        layers.append(Dense(dims[-1], 2, "linear", rng))
        self.body = Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.body(x)


def reparameterize(g: LatentGaussian, rng: np.random.Generator | None = None, eps=None) -> np.ndarray:
    """One draw ``mu + sigma * eps`` with ``eps ~ N(0, I)`` unless ``eps`` is given."""
    if eps is None:
        eps = rng.standard_normal(np.shape(g.mu))
    return g.mu + g.sigma * eps


def kl_term(g: LatentGaussian) -> np.ndarray:
    """Analytic KL(N(mu, diag sigma^2) || N(0, I)), summed over latent dims."""
    mu, sigma = np.asarray(g.mu), np.asarray(g.sigma)
    return 0.5 * (mu * mu + sigma * sigma - 2.0 * np.log(sigma) - 1.0).sum(axis=-1)


def kl_tensor(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Batch mean of the analytic KL, differentiable in the encoder outputs."""
    per_dim = ad.square(mu) + ad.exp(2.0 * log_sigma) - 2.0 * log_sigma - 1.0
    return 0.5 * per_dim.sum(axis=-1).mean()


def reconstruction_tensor(x: Tensor, x_rec: Tensor) -> Tensor:
    return 0.5 * ad.square(x - x_rec).sum(axis=-1).mean()


@dataclass
class VaeTrace:
    """Per-step ELBO components plus per-epoch means."""

    step_reconstruction: list[float] = field(default_factory=list)
    step_kl: list[float] = field(default_factory=list)
    step_total: list[float] = field(default_factory=list)
    epoch_reconstruction: list[float] = field(default_factory=list)
    epoch_kl: list[float] = field(default_factory=list)
    epoch_total: list[float] = field(default_factory=list)


class VaeModel(Module):
    def __init__(self, cfg: VaeConfig):
        self.cfg = cfg
        self.streams = Streams(cfg.seed)
        rng = self.streams["weight-init"]
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.predictor: Predictor | None = None
        self.kind: str | None = None
        self.input_scaler: InputScaler | None = None
        self.scaler: TargetScaler | None = None

    # --- unsupervised phase ------------------------------------------------

    def _inputs(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[-1] != self.cfg.input_dim:
            raise ad.ShapeError(f"input has {x.shape[-1]} features, model expects {self.cfg.input_dim}")
        return x if self.input_scaler is None else self.input_scaler.transform(x)

    def encode(self, x) -> LatentGaussian:
        mu, log_sigma = self.encoder(Tensor(self._inputs(x)))
        return LatentGaussian(mu.data, np.exp(log_sigma.data))

    def decode(self, z) -> np.ndarray:
        return self.decoder(Tensor(np.atleast_2d(z))).data

    def elbo_terms(self, x: np.ndarray, eps: np.ndarray) -> tuple[Tensor, Tensor]:
        """Reconstruction and KL terms for already-scaled inputs and fixed noise."""
        mu, log_sigma = self.encoder(Tensor(x))
        z = mu + ad.exp(log_sigma) * eps
        return reconstruction_tensor(Tensor(x), self.decoder(z)), kl_tensor(mu, log_sigma)

    # --- predictor -----------------------------------------------------------

    def predictor_input_width(self, kind: str) -> int:
        d = self.cfg.latent_dim
        return 2 * d if kind == "m2" and self.cfg.m2_input == "z+mu" else d

    def _m2_features(self, z: np.ndarray, mu: np.ndarray) -> np.ndarray:
        return np.concatenate([z, mu], axis=-1) if self.cfg.m2_input == "z+mu" else z

    def predict_from_latent(self, g: LatentGaussian, samples: int | None = None, rng=None) -> np.ndarray:
        if self.predictor is None:
            raise RuntimeError("predictor has not been trained")
        self.predictor.eval()
        if self.kind == "m1":
            return self.predictor(Tensor(g.mu)).data
        samples = self.cfg.samples if samples is None else samples
        if samples < 1:
            raise ValueError("M2 prediction needs at least one sample")
        rng = rng if rng is not None else self.streams["prediction"]
        n = len(g.mu)
        eps = rng.standard_normal((samples, n, self.cfg.latent_dim))
        z = (g.mu + g.sigma * eps).reshape(samples * n, -1)
        mu = np.broadcast_to(g.mu, (samples, n, self.cfg.latent_dim)).reshape(samples * n, -1)
        out = self.predictor(Tensor(self._m2_features(z, mu))).data
        return out.reshape(samples, n, 2).mean(axis=0)

    def predict(self, x, samples: int | None = None, rng=None) -> np.ndarray:
        """Positions (n, 2) in scaled target units."""
        return self.predict_from_latent(self.encode(x), samples, rng)

    # --- persistence -------------------------------------------------------

    def save(self, path, **extra) -> None:
        blocks = {"encoder": self.encoder.state_dict(), "decoder": self.decoder.state_dict()}
        if self.predictor is not None:
            blocks["predictor"] = self.predictor.state_dict()
        checkpoint.save(
            path,
            "vae",
            self.cfg.to_dict(),
            blocks,
            self.scaler,
            self.cfg.seed,
            predictor_kind=self.kind,
            input_scaler=None if self.input_scaler is None else self.input_scaler.to_dict(),
            **extra,
        )

    @classmethod
    def load(cls, path) -> "VaeModel":
        doc = checkpoint.load(path, "vae")
        model = cls(VaeConfig(**doc["config"]))
        model.encoder.load_state_dict(doc["params"]["encoder"])
        model.decoder.load_state_dict(doc["params"]["decoder"])
        if doc.get("input_scaler"):
            model.input_scaler = InputScaler.from_dict(doc["input_scaler"])
        if doc["scaler"] is not None:
            model.scaler = TargetScaler.from_dict(doc["scaler"])
        kind = doc.get("predictor_kind")
        if kind is not None and "predictor" in doc["params"]:
            model._new_predictor(kind)
            model.predictor.load_state_dict(doc["params"]["predictor"])
        return model

    def _new_predictor(self, kind: str) -> Predictor:
        if kind not in ("m1", "m2"):
            raise ValueError(f"predictor kind must be 'm1' or 'm2', got {kind!r}")
        self.kind = kind
        self.predictor = Predictor(
            self.predictor_input_width(kind), self.cfg, self.streams[f"{kind}-init"], self.streams[f"{kind}-dropout"]
        )
        return self.predictor


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_unsupervised(model: VaeModel, x_all, epochs: int | None = None) -> VaeTrace:
    """Fit encoder and decoder on every fingerprint, one latent draw per datum per step."""
    cfg = model.cfg
    x_all = np.atleast_2d(np.asarray(x_all, dtype=np.float64))
    if len(x_all) == 0:
        raise ValueError("empty unlabeled pool")
    if model.input_scaler is None:
        model.input_scaler = InputScaler.fit(x_all)
    x = model._inputs(x_all)
    epochs = cfg.vae_epochs if epochs is None else epochs
    params = model.encoder.parameters() + model.decoder.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)
    order_rng, eps_rng = model.streams["vae-batches"], model.streams["vae-noise"]
    trace = VaeTrace()
    for epoch in range(epochs):
        sums = np.zeros(3)
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, order_rng)):
            eps = eps_rng.standard_normal((len(idx), cfg.latent_dim))
            try:
                rec, kl = model.elbo_terms(x[idx], eps)
                total = rec + kl
                ad.backward(total, params)
                opt.step()
            except NumericalError as exc:
                raise TrainingDiverged("unsupervised", exc.op, epoch, b) from None
            r, k = rec.item(), kl.item()
            trace.step_reconstruction.append(r)
            trace.step_kl.append(k)
            trace.step_total.append(total.item())
            sums += np.array([r, k, total.item()]) * len(idx)
        sums /= len(x)
        trace.epoch_reconstruction.append(float(sums[0]))
        trace.epoch_kl.append(float(sums[1]))
        trace.epoch_total.append(float(sums[2]))
    return trace


def m2_loss(model: VaeModel, g: LatentGaussian, y: np.ndarray, eps: np.ndarray) -> Tensor:
    """Batch mean of ``|y - f(z, mu)|^2 / (2 sigma_y^2)`` for ``z = mu + sigma*eps``."""
    z = g.mu + g.sigma * eps
    pred = model.predictor(Tensor(model._m2_features(z, g.mu)))
    sq = ad.square(pred - Tensor(y)).sum(axis=-1).mean()
    return sq * (1.0 / (2.0 * model.cfg.sigma_y**2))


def _train_predictor(model: VaeModel, kind: str, x, y, epochs: int | None) -> list[float]:
    cfg = model.cfg
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1, 2)
    if len(x) == 0:
        raise ValueError("empty labeled set")
    if len(x) != len(y):
        raise ValueError(f"{len(x)} inputs but {len(y)} labels")
    if epochs is None:
        epochs = cfg.predictor_epochs
        if cfg.predictor_steps is not None:
            # equal optimizer budget whatever the labeled-set size
            epochs = -(-cfg.predictor_steps // -(-len(x) // cfg.batch_size))
    g = model.encode(x)  # encoder is frozen: computed once, outside any graph
    predictor = model._new_predictor(kind)
    params = predictor.parameters()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)
    order_rng, eps_rng = model.streams[f"{kind}-batches"], model.streams[f"{kind}-noise"]
    losses = []
    predictor.train()
    for epoch in range(epochs):
        total = 0.0
        for b, idx in enumerate(_batches(len(x), cfg.batch_size, order_rng)):
            try:
                if kind == "m1":
                    loss = mse_loss(predictor(Tensor(g.mu[idx])), y[idx])
                else:
                    eps = eps_rng.standard_normal((len(idx), cfg.latent_dim))
                    loss = m2_loss(model, LatentGaussian(g.mu[idx], g.sigma[idx]), y[idx], eps)
                ad.backward(loss, params)
                opt.step()
            except NumericalError as exc:
                raise TrainingDiverged(kind, exc.op, epoch, b) from None
            total += loss.item() * len(idx)
        losses.append(total / len(x))
    predictor.eval()
    return losses


def train_m1(model: VaeModel, x_labeled, y_labeled, epochs: int | None = None) -> list[float]:
    """Deterministic predictor from ``mu_z``; returns per-epoch training MSE."""
    return _train_predictor(model, "m1", x_labeled, y_labeled, epochs)


def train_m2(model: VaeModel, x_labeled, y_labeled, epochs: int | None = None) -> list[float]:
    """Stochastic predictor on latent draws; returns per-epoch training loss."""
    return _train_predictor(model, "m2", x_labeled, y_labeled, epochs)


def export_latent(model: VaeModel, ds: Dataset) -> list[list]:
    """One row per record: latent means, then building and floor ('' when absent)."""
    mu = model.encode(ds.rssi).mu
    building = ds.meta.get("building")
    floor = ds.meta.get("floor")
    rows = []
    for i in range(len(ds)):
        rows.append(
            [*(float(v) for v in mu[i]), "" if building is None else int(building[i]), "" if floor is None else int(floor[i])]
        )
    return rows


def write_latent_csv(rows: list[list], path, latent_dim: int) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"z{i + 1}" for i in range(latent_dim)] + ["building", "floor"])
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
