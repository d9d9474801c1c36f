"""Mini-batch training of a :class:`ModelParams` with Adam."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses, nets
from . import tensor as tn
from .errors import NonFiniteError
from .losses import LossSpec
from .nets import EncodedBatch, ForwardMode, ModelParams
from .tensor import RngStream

log = logging.getLogger(__name__)

EARLY_STOP_MODES = ("none", "plateau", "validation")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    early_stop: str = "plateau"
    plateau_patience: int = 10
    plateau_tol: float = 1e-4
    val_fraction: float = 0.1
    lr_schedule: str = "constant"  # constant | cosine (decays to lr_min_ratio·lr)
    lr_min_ratio: float = 0.01

    def __post_init__(self):
        if self.early_stop not in EARLY_STOP_MODES:
            raise ValueError(f"early_stop must be one of {EARLY_STOP_MODES}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.losses)


def batch_loss(params: ModelParams, batch: EncodedBatch, targets: np.ndarray, spec: LossSpec,
               mode: ForwardMode, rng: RngStream | None = None) -> tn.Tensor:
    """Data loss of one mini-batch (regression targets must already be scaled)."""
    out = nets.forward(params, batch, mode)
    head, s = nets.split_output(out, params.config.task)
    if spec.kind == "mse":
        return losses.mse_loss(head, targets)
    if spec.kind == "hetero":
        return losses.hetero_regression_loss(head, s, targets)
    if spec.kind == "ce":
        return losses.cross_entropy_loss(head, targets)
    return losses.attenuated_ce_loss(head, s, targets, spec.T_softmax, rng=rng, alpha=spec.alpha_elu)


def scale_targets(params: ModelParams, y: np.ndarray) -> np.ndarray:
    if params.config.task != "regression":
        return np.asarray(y, dtype=np.int64)
    return (np.asarray(y, dtype=np.float64) - params.meta["target_mean"]) / params.meta["target_std"]


def _plateaued(history: list[float], patience: int, tol: float) -> bool:
    if len(history) <= patience:
        return False
    before, now = history[-patience - 1], history[-1]
    return (before - now) < tol * max(abs(before), 1e-12)


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant" or cfg.epochs == 1:
        return cfg.lr
    floor = cfg.lr * cfg.lr_min_ratio
    return floor + 0.5 * (cfg.lr - floor) * (1.0 + np.cos(np.pi * epoch / (cfg.epochs - 1)))


def fit(params: ModelParams, batch: EncodedBatch, y, spec: LossSpec, cfg: TrainConfig,
        rng: RngStream, l2_lambda: float | None = None) -> TrainResult:
    """Train ``params`` in place.

    Regression targets are standardized with the training mean/std, which are
    stored in ``params.meta`` and undone at prediction time.  Raw feature
    inputs of ``mlp`` models are standardized the same way.
    """
    model_cfg = params.config
    if spec.is_classification != (model_cfg.task == "classification"):
        raise ValueError(f"loss {spec.kind!r} does not fit a {model_cfg.task} model")
    lam = model_cfg.l2_lambda if l2_lambda is None else l2_lambda
    y = np.asarray(y)
    if model_cfg.task == "regression":
        std = float(np.std(y))
        params.meta["target_mean"] = float(np.mean(y))
        params.meta["target_std"] = std if std > 0 else 1.0
    if model_cfg.arch == "mlp":
        feats = np.asarray(batch.features, dtype=np.float64)
        std = feats.std(axis=0)
        params.meta["feature_mean"] = feats.mean(axis=0).tolist()
        params.meta["feature_std"] = np.where(std > 0, std, 1.0).tolist()
    params.meta["loss"] = spec.kind
    params.meta["T_softmax"] = spec.T_softmax
    targets = scale_targets(params, y)

    n = len(batch)
    train_idx = np.arange(n)
    val_idx = np.array([], dtype=np.int64)
    if cfg.early_stop == "validation":
        perm = rng.child("validation").permutation(n)
        n_val = max(1, int(round(cfg.val_fraction * n)))
        val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])

    opt = tn.Adam(params.parameters(), lr=cfg.lr)
    result = TrainResult()
    best_val, best_arrays, since_best = np.inf, None, 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        opt.lr = _epoch_lr(cfg, epoch)
        epoch_rng = rng.child(f"epoch{epoch}")
        order = train_idx[epoch_rng.child("shuffle").permutation(len(train_idx))]
        total, count = 0.0, 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            step_rng = epoch_rng.child(f"step{b}")
            opt.zero_grad()
            with tn.Tape() as tape:
                data_loss = batch_loss(params, batch.take(idx), targets[idx], spec,
                                       ForwardMode.train(step_rng.child("dropout")),
                                       step_rng.child("logits"))
                loss = tn.add(data_loss, nets.l2_penalty(params, lam)) if lam > 0 else data_loss
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteError(
                        f"non-finite training loss at epoch {epoch}, step {b} "
                        f"(data loss {data_loss.item()!r}); try a lower learning rate"
                    )
                tape.backward(loss)
            opt.step()
            total += data_loss.item() * len(idx)
            count += len(idx)
        result.losses.append(total / max(count, 1))
        result.epoch_seconds.append(time.perf_counter() - t0)

        if cfg.early_stop == "validation" and len(val_idx):
            val = batch_loss(params, batch.take(val_idx), targets[val_idx], spec,
                             nets.DETERMINISTIC, rng.child("val").child(str(epoch))).item()
            result.val_losses.append(val)
            if val < best_val:
                best_val, best_arrays, since_best = val, params.arrays(), 0
            else:
                since_best += 1
                if since_best >= cfg.plateau_patience:
                    result.stopped_early = True
                    break
        elif cfg.early_stop == "plateau" and _plateaued(result.losses, cfg.plateau_patience, cfg.plateau_tol):
            result.stopped_early = True
            break
        log.debug("epoch %d loss %.6f", epoch, result.losses[-1])

    if best_arrays is not None:
        for name, arr in best_arrays.items():
            params.tensors[name].values = arr
    return result
