"""Training losses: squared error, loss-attenuated regression, cross-entropy and
the sampled, loss-attenuated classification objective.

Every loss is mean-reduced over the batch and built from tape operations, so
it is differentiable w.r.t. the network outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import NonFiniteError
from .tensor import RngStream, Tensor

LOSS_KINDS = ("mse", "hetero", "ce", "attenuated_ce")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "hetero"
    T_softmax: int = 20
    alpha_elu: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.T_softmax < 1:
            raise ValueError(f"T_softmax must be >= 1, got {self.T_softmax}")

    @property
    def is_classification(self) -> bool:
        return self.kind in ("ce", "attenuated_ce")


def _check_finite(*arrays) -> None:
    for arr in arrays:
        values = arr.values if isinstance(arr, Tensor) else np.asarray(arr, dtype=float)
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("loss input contains NaN or infinite values")


def hetero_regression_loss(y_hat, s, y) -> Tensor:
    """mean[(y - ŷ)² / (2·exp(s)) + s / 2], with ``s`` the predicted log-variance."""
    y_hat, s = tn.as_tensor(y_hat), tn.as_tensor(s)
    y = np.asarray(y, dtype=np.float64)
    if not (y_hat.shape == s.shape == y.shape):
        raise ValueError(f"shape mismatch: y_hat {y_hat.shape}, s {s.shape}, y {y.shape}")
    _check_finite(y_hat, s, y)
    resid_sq = tn.square(tn.sub(y, y_hat))
    per_sample = resid_sq * tn.exp(-s) * 0.5 + s * 0.5
    return tn.reduce_mean(per_sample)


def mse_loss(y_hat, y) -> Tensor:
    """mean[(y - ŷ)² / 2]: the attenuated loss with unit variance."""
    y_hat = tn.as_tensor(y_hat)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: y_hat {y_hat.shape}, y {y.shape}")
    return tn.reduce_mean(tn.square(tn.sub(y, y_hat)) * 0.5)


def _one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return np.eye(n_classes)[labels]


def _per_sample_ce(logits: Tensor, onehot: np.ndarray) -> Tensor:
    # logsumexp_c(f) - f_label, along the last axis
    picked = tn.reduce_sum(tn.mul(logits, onehot), axis=-1)
    return tn.sub(tn.logsumexp(logits, axis=-1), picked)


def cross_entropy_loss(logits, labels) -> Tensor:
    logits = tn.as_tensor(logits)
    onehot = _one_hot(labels, logits.shape[-1])
    return tn.reduce_mean(_per_sample_ce(logits, onehot))


def attenuated_ce_loss(logits, s, labels, T_softmax: int = 20, rng: RngStream | None = None,
                       alpha: float = 1.0, eps: np.ndarray | None = None) -> Tensor:
    """Loss-attenuated cross-entropy with Gaussian-perturbed logits.

    Logits are perturbed ``T_softmax`` times as ``logits + σ·ε`` with
    ``σ = exp(s/2)``; the per-sample loss is
    ``CE·(1 + mean_t ELU(CE_t - CE)) + exp(σ²) - 1``.
    ``eps`` (shape (N, T, C)) may be supplied instead of ``rng`` for exact replay.
    """
    logits, s = tn.as_tensor(logits), tn.as_tensor(s)
    n, n_classes = logits.shape
    if T_softmax < 1:
        raise ValueError(f"T_softmax must be >= 1, got {T_softmax}")
    if eps is None:
        if rng is None:
            raise ValueError("attenuated_ce_loss needs either rng or eps")
        eps = rng.normal(size=(n, T_softmax, n_classes))
    eps = np.asarray(eps, dtype=np.float64)
    onehot = _one_hot(labels, n_classes)

    sigma = tn.exp(s * 0.5)  # (N,)
    ce = _per_sample_ce(logits, onehot)  # (N,)
    perturbed = tn.add(tn.reshape(logits, (n, 1, n_classes)),
                       tn.mul(tn.reshape(sigma, (n, 1, 1)), eps))  # (N, T, C)
    ce_t = _per_sample_ce(perturbed, onehot[:, None, :])  # (N, T)
    undistorted = tn.reshape(ce, (n, 1))
    attenuation = tn.reduce_mean(tn.elu(tn.sub(ce_t, undistorted), alpha), axis=1)  # (N,)
    variance = tn.exp(s)
    per_sample = ce * (attenuation + 1.0) + tn.exp(variance) - 1.0
    return tn.reduce_mean(per_sample)
