"""Mixture of diagonal 2-D Gaussians: parameter extraction, NLL, sampling.

Raw network output for K components has width 5K and layout
``[pi-logits K | mu_x K | mu_y K | sigma_x-logits K | sigma_y-logits K]``.
Weights are ``softmax(pi-logits)``; deviations are ``exp(logit)`` floored at
``SIGMA_FLOOR``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SIGMA_FLOOR = 1e-3
LOG_SIGMA_FLOOR = math.log(SIGMA_FLOOR)
LOG_2PI = math.log(2.0 * math.pi)
# -log of the largest density any valid mixture can reach
NLL_LOWER_BOUND = LOG_2PI + 2.0 * LOG_SIGMA_FLOOR


@dataclass(frozen=True)
class MixtureParams:
    """Mixture parameters; arrays may carry leading batch axes.

    weights: (..., K); means and sigmas: (..., K, 2).
    """

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    @property
    def n_components(self) -> int:
        return self.weights.shape[-1]

    def __len__(self):
        return 1 if self.weights.ndim == 1 else self.weights.shape[0]

    def __getitem__(self, i) -> "MixtureParams":
        return MixtureParams(self.weights[i], self.means[i], self.sigmas[i])

    def validate(self) -> None:
        if not np.allclose(self.weights.sum(axis=-1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("mixture weights do not sum to 1")
        if (self.weights < 0).any() or (self.weights > 1).any():
            raise ValueError("mixture weights outside [0, 1]")
        if not np.isfinite(self.sigmas).all() or (self.sigmas < SIGMA_FLOOR).any():
            raise ValueError(f"deviations must be finite and >= {SIGMA_FLOOR}")


def _check_width(width: int) -> int:
    if width % 5 or width == 0:
        raise ValueError(f"mixture output width must be a positive multiple of 5, got {width}")
    return width // 5


def split_logits(raw: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """Return log-weights, mu_x, mu_y, log-sigma_x, log-sigma_y, each (batch, K)."""
    k = _check_width(raw.shape[-1])
    log_pi = ad.log_softmax(raw[..., :k])
    mu_x, mu_y = raw[..., k : 2 * k], raw[..., 2 * k : 3 * k]
    log_sx = ad.clamp_min(raw[..., 3 * k : 4 * k], LOG_SIGMA_FLOOR)
    log_sy = ad.clamp_min(raw[..., 4 * k :], LOG_SIGMA_FLOOR)
    return log_pi, mu_x, mu_y, log_sx, log_sy


def params_from_logits(raw) -> MixtureParams:
    raw = np.asarray(raw.data if isinstance(raw, Tensor) else raw, dtype=np.float64)
    k = _check_width(raw.shape[-1])
    logits = raw[..., :k]
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    weights = shifted / shifted.sum(axis=-1, keepdims=True)
    means = np.stack([raw[..., k : 2 * k], raw[..., 2 * k : 3 * k]], axis=-1)
    sigmas = np.exp(np.maximum(np.stack([raw[..., 3 * k : 4 * k], raw[..., 4 * k :]], axis=-1), LOG_SIGMA_FLOOR))
    return MixtureParams(weights, means, sigmas)


def nll(raw: Tensor, target) -> Tensor:
    """Mean over the batch of ``-log sum_k pi_k N(target; mu_k, diag sigma_k^2)``.

    raw: (batch, 5K); target: (batch, 2).
    """
    raw = ad.as_tensor(raw)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw.reshape(1, -1)
        target = target.reshape(1, 2)
    if target.shape != (raw.shape[0], 2):
        raise ad.ShapeError(f"nll: target shape {target.shape} does not match batch {raw.shape[0]}")
    log_pi, mu_x, mu_y, log_sx, log_sy = split_logits(raw)
    zx = (target[:, :1] - mu_x) * ad.exp(-log_sx)
    zy = (target[:, 1:] - mu_y) * ad.exp(-log_sy)
    log_comp = log_pi - LOG_2PI - log_sx - log_sy - 0.5 * (ad.square(zx) + ad.square(zy))
    return -ad.logsumexp(log_comp, axis=-1).mean()


def nll_value(params: MixtureParams, target) -> np.ndarray:
    """Per-sample NLL evaluated directly from :class:`MixtureParams` (no graph)."""
    target = np.asarray(target, dtype=np.float64)
    z = (target[..., None, :] - params.means) / params.sigmas
    log_comp = (
        np.log(np.maximum(params.weights, 1e-300))
        - LOG_2PI
        - np.log(params.sigmas).sum(axis=-1)
        - 0.5 * (z * z).sum(axis=-1)
    )
    peak = log_comp.max(axis=-1, keepdims=True)
    return -(np.log(np.exp(log_comp - peak).sum(axis=-1)) + peak[..., 0])


def sample(params: MixtureParams, rng: np.random.Generator, size: int | None = None, return_components=False):
    """Ancestral draw: component from the weights, then a point from that Gaussian.

    Returns shape ``params.weights.shape[:-1] + (2,)``, prefixed by ``size`` when
    given, plus the chosen component indices if ``return_components``.
    """
    batch_shape = params.weights.shape[:-1]
    shape = ((size,) if size is not None else ()) + batch_shape
    cdf = np.cumsum(params.weights, axis=-1)
    u = rng.random(shape + (1,))
    comp = np.minimum((u > cdf).sum(axis=-1), params.n_components - 1)
    means = np.broadcast_to(params.means, shape + params.means.shape[-2:])
    sigmas = np.broadcast_to(params.sigmas, shape + params.sigmas.shape[-2:])
    mu = np.take_along_axis(means, comp[..., None, None], axis=-2)[..., 0, :]
    sd = np.take_along_axis(sigmas, comp[..., None, None], axis=-2)[..., 0, :]
    draws = mu + sd * rng.standard_normal(shape + (2,))
    return (draws, comp) if return_components else draws


def mixture_mean(params: MixtureParams) -> np.ndarray:
    return (params.weights[..., None] * params.means).sum(axis=-2)
