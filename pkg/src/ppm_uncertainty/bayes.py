"""MC-dropout inference and uncertainty decomposition.

Regression: ``total = epistemic + aleatoric`` where epistemic is the variance
of the T stochastic point predictions and aleatoric the mean of the
predicted variances ``exp(s_t)``.

Classification: predictive entropy H of the MC-averaged probabilities,
mutual information I = H - E_t[H(p_t)], and aleatoric H - I.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .nets import EncodedBatch, ForwardMode, ModelParams
from .tensor import RngStream

# rows per forward call when passes are stacked; bounds peak memory
_CHUNK_ROWS = 8192


@dataclass(frozen=True)
class PredictionWithUncertainty:
    """Per-sample regression predictions (all fields are arrays of equal length)."""

    point: np.ndarray
    epistemic: np.ndarray
    aleatoric: np.ndarray
    total: np.ndarray
    T: int

    def __len__(self) -> int:
        return len(self.point)


@dataclass(frozen=True)
class ClassPrediction:
    probs: np.ndarray  # (N, C)
    entropy_H: np.ndarray
    mutual_info_I: np.ndarray
    aleatoric_HmI: np.ndarray
    T: int

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def p_positive(self) -> np.ndarray:
        return self.probs[:, -1]


def _xlogx(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats, with 0·log 0 = 0."""
    return -np.sum(_xlogx(np.asarray(p, dtype=np.float64)), axis=axis)


def decompose_entropy(prob_draws) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(H, I, H - I) from MC probability draws of shape (..., T, C)."""
    draws = np.asarray(prob_draws, dtype=np.float64)
    mean_p = draws.mean(axis=-2)
    H = entropy(mean_p)
    expected = entropy(draws).mean(axis=-1)
    I = np.clip(H - expected, 0.0, None)
    return H, I, H - I


def _stacked_passes(params: ModelParams, batch: EncodedBatch, T: int, rng: RngStream) -> np.ndarray:
    """Raw outputs of T stochastic passes, shape (T, N, head_width)."""
    n = len(batch)
    per_chunk = max(1, _CHUNK_ROWS // max(n, 1))
    outs = []
    done = 0
    while done < T:
        reps = min(per_chunk, T - done)
        mode = ForwardMode.stochastic(rng.child(f"passes{done}"))
        out = nets.forward(params, batch.tile(reps), mode).values
        outs.append(out.reshape(reps, n, -1))
        done += reps
    return np.concatenate(outs, axis=0)


def _unscale(params: ModelParams, y_hat: np.ndarray, var: np.ndarray):
    mean = params.meta.get("target_mean", 0.0)
    std = params.meta.get("target_std", 1.0)
    return y_hat * std + mean, var * std * std


def mc_predict_regression(params: ModelParams, batch: EncodedBatch, T: int = 50,
                          rng: RngStream | None = None) -> PredictionWithUncertainty:
    if T < 2:
        raise ValueError(f"MC prediction needs T >= 2, got {T}")
    if rng is None:
        raise ValueError("mc_predict_regression needs an RngStream")
    raw = _stacked_passes(params, batch, T, rng)
    y_t, var_t = _unscale(params, raw[:, :, 0], np.exp(raw[:, :, 1]))
    point = y_t.mean(axis=0)
    # (1/T)Σŷ² - ŷ̄², evaluated in centred form so it cannot go negative
    epistemic = np.mean((y_t - point) ** 2, axis=0)
    aleatoric = var_t.mean(axis=0)
    return PredictionWithUncertainty(point, epistemic, aleatoric, epistemic + aleatoric, T)


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _pass_probabilities(logits: np.ndarray, s: np.ndarray, logit_samples: int,
                        rng: RngStream | None) -> np.ndarray:
    """Per-pass probability vectors; averages softmax over Gaussian logit draws if requested."""
    if logit_samples <= 0:
        return _softmax(logits)
    sigma = np.exp(s / 2.0)[..., None, None]
    eps = rng.normal(size=logits.shape[:-1] + (logit_samples, logits.shape[-1]))
    return _softmax(logits[..., None, :] + sigma * eps).mean(axis=-2)


def _default_logit_samples(params: ModelParams) -> int:
    return int(params.meta.get("T_softmax", 20)) if params.meta.get("loss") == "attenuated_ce" else 0


def mc_predict_classification(params: ModelParams, batch: EncodedBatch, T: int = 50,
                              rng: RngStream | None = None,
                              logit_samples: int | None = None) -> ClassPrediction:
    """MC-dropout classification.

    ``logit_samples`` Gaussian logit draws (using the learned ``s``) are
    averaged into each pass's probability vector; it defaults to the model's
    training ``T_softmax`` for attenuated-CE models and 0 otherwise.
    """
    if T < 2:
        raise ValueError(f"MC prediction needs T >= 2, got {T}")
    if rng is None:
        raise ValueError("mc_predict_classification needs an RngStream")
    if logit_samples is None:
        logit_samples = _default_logit_samples(params)
    raw = _stacked_passes(params, batch, T, rng.child("dropout"))
    probs_t = _pass_probabilities(raw[:, :, :-1], raw[:, :, -1], logit_samples, rng.child("logits"))
    draws = np.swapaxes(probs_t, 0, 1)  # (N, T, C)
    H, I, HmI = decompose_entropy(draws)
    return ClassPrediction(draws.mean(axis=1), H, I, HmI, T)


def deterministic_predict(params: ModelParams, batch: EncodedBatch):
    """Single dropout-free pass.

    Returns ``(point, aleatoric_variance)`` for regression and the softmax
    probability matrix for classification.
    """
    out = nets.forward(params, batch, nets.DETERMINISTIC).values
    if params.config.task == "regression":
        return _unscale(params, out[:, 0], np.exp(out[:, 1]))
    return _softmax(out[:, :-1])
