"""CNN, LSTM and dense networks with dropout and a doubled output head.

The head emits the point estimate (or class logits) followed by one extra
unit ``s = log σ²`` for the per-sample aleatoric variance, so regression
outputs have shape (batch, 2) and classification outputs (batch, n_classes + 1).

Dropout placement:

* CNN: the input of every convolution (i.e. what the kernels see) and the
  input of every dense layer;
* LSTM: the inputs of all eight weight matrices of each cell, one mask per
  matrix per sequence, kept fixed across time steps;
* MLP: the input of every dense layer after the first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tn
from .tensor import RngStream, Tensor

ARCHS = ("cnn", "lstm", "mlp")
TASKS = ("regression", "classification")
GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "cnn"
    task: str = "regression"
    vocab_size: int = 2
    seq_len: int = 10
    embed_dim: int = 8
    conv_channels: tuple = (16, 16)
    kernel_width: int = 3
    lstm_hidden: tuple = (16, 16)
    # hidden dense widths; the doubled output head is the final dense layer
    dense_widths: tuple = (64, 64)
    n_inputs: int = 1
    dropout_p: float = 0.1
    n_classes: int = 2
    l2_lambda: float = 0.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if len(self.dense_widths) != 2:
            raise ValueError("dense_widths must list the 2 hidden dense layers (the head is the third)")
        widths = list(self.dense_widths)
        if self.arch == "cnn":
            widths += list(self.conv_channels) + [self.embed_dim]
            if self.kernel_width % 2 == 0:
                raise ValueError("kernel_width must be odd")
        elif self.arch == "lstm":
            widths += list(self.lstm_hidden) + [self.embed_dim]
        else:
            widths.append(self.n_inputs)
        if min(widths) <= 0:
            raise ValueError(f"all layer widths must be positive, got {widths}")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.task == "classification" and self.n_classes < 2:
            raise ValueError("classification needs n_classes >= 2")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "lstm_hidden", tuple(self.lstm_hidden))
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))

    @property
    def head_width(self) -> int:
        return 2 if self.task == "regression" else self.n_classes + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor]
    # target scaling and training metadata stored alongside the weights
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def parameters(self) -> list[Tensor]:
        return [self.tensors[k] for k in sorted(self.tensors)]

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def weight_names(self) -> list[str]:
        """Names of tensors subject to L2: everything but biases."""
        return sorted(k for k in self.tensors if not k.endswith(".bias"))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.values.copy() for k, t in self.tensors.items()}

    def save(self, path) -> None:
        meta = {"config": self.config.to_dict(), **self.meta}
        tn.save_checkpoint(path, self.arrays(), meta)

    @classmethod
    def load(cls, path) -> "ModelParams":
        arrays, meta = tn.load_checkpoint(path)
        meta = dict(meta)
        config = ModelConfig.from_dict(meta.pop("config"))
        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
        return cls(config, tensors, meta)


@dataclass(frozen=True)
class EncodedBatch:
    """Network inputs: encoded prefixes (cnn/lstm) or raw feature rows (mlp)."""

    activity_ids: Optional[np.ndarray] = None  # (batch, seq_len) int
    elapsed: Optional[np.ndarray] = None  # (batch, seq_len) float
    features: Optional[np.ndarray] = None  # (batch, n_inputs) float

    def __len__(self) -> int:
        for arr in (self.activity_ids, self.features):
            if arr is not None:
                return len(arr)
        return 0

    def take(self, idx) -> "EncodedBatch":
        return EncodedBatch(*(None if a is None else a[idx]
                              for a in (self.activity_ids, self.elapsed, self.features)))

    def tile(self, reps: int) -> "EncodedBatch":
        return EncodedBatch(*(None if a is None else np.concatenate([a] * reps, axis=0)
                              for a in (self.activity_ids, self.elapsed, self.features)))

    @classmethod
    def from_features(cls, x) -> "EncodedBatch":
        x = np.asarray(x, dtype=np.float64)
        return cls(features=x.reshape(len(x), -1))


@dataclass(frozen=True)
class ForwardMode:
    variant: str = "deterministic"  # train | stochastic | deterministic
    rng: Optional[RngStream] = None

    def __post_init__(self):
        if self.variant not in ("train", "stochastic", "deterministic"):
            raise ValueError(f"unknown forward mode {self.variant!r}")
        if self.variant != "deterministic" and self.rng is None:
            raise ValueError(f"{self.variant} mode needs an RngStream")

    @property
    def dropout_active(self) -> bool:
        return self.variant != "deterministic"

    @classmethod
    def train(cls, rng: RngStream) -> "ForwardMode":
        return cls("train", rng)

    @classmethod
    def stochastic(cls, rng: RngStream) -> "ForwardMode":
        return cls("stochastic", rng)

    @classmethod
    def deterministic(cls) -> "ForwardMode":
        return cls("deterministic")


DETERMINISTIC = ForwardMode.deterministic()


def _uniform(rng: RngStream, shape, fan_in: int, gain: float) -> np.ndarray:
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(size=shape, low=-bound, high=bound)


def build(config: ModelConfig, rng: RngStream) -> ModelParams:
    """Initialise parameters with fan-in scaled uniform weights and zero biases."""
    arrays: dict[str, np.ndarray] = {}
    relu_gain = np.sqrt(6.0)

    if config.arch in ("cnn", "lstm"):
        emb = rng.child("embedding").normal(size=(config.vocab_size, config.embed_dim)) * 0.1
        emb[0] = 0.0
        arrays["embedding"] = emb
        in_ch = config.embed_dim + 1  # embedding + standardized elapsed time

    if config.arch == "cnn":
        for i, out_ch in enumerate(config.conv_channels, start=1):
            fan_in = in_ch * config.kernel_width
            arrays[f"conv{i}.weight"] = _uniform(rng.child(f"conv{i}"),
                                                 (out_ch, in_ch, config.kernel_width), fan_in, relu_gain)
            arrays[f"conv{i}.bias"] = np.zeros(out_ch)
            in_ch = out_ch
        flat = in_ch * config.seq_len
    elif config.arch == "lstm":
        for i, hidden in enumerate(config.lstm_hidden, start=1):
            r = rng.child(f"lstm{i}")
            for gate in GATES:
                arrays[f"lstm{i}.W_{gate}"] = _uniform(r.child(f"W_{gate}"), (in_ch, hidden), hidden, 1.0)
                arrays[f"lstm{i}.U_{gate}"] = _uniform(r.child(f"U_{gate}"), (hidden, hidden), hidden, 1.0)
                bias = np.ones(hidden) if gate == "f" else np.zeros(hidden)
                arrays[f"lstm{i}.b_{gate}.bias"] = bias
            in_ch = hidden
        flat = in_ch
    else:
        flat = config.n_inputs

    for i, width in enumerate(config.dense_widths, start=1):
        arrays[f"dense{i}.weight"] = _uniform(rng.child(f"dense{i}"), (flat, width), flat, relu_gain)
        arrays[f"dense{i}.bias"] = np.zeros(width)
        flat = width
    arrays["head.weight"] = _uniform(rng.child("head"), (flat, config.head_width), flat, 1.0)
    arrays["head.bias"] = np.zeros(config.head_width)

    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}
    return ModelParams(config, tensors)


def _drop(x: Tensor, p: float, mode: ForwardMode, label: str) -> Tensor:
    if not mode.dropout_active or p == 0.0:
        return x
    return tn.dropout(x, p, mode.rng.child(label))


def _sequence_input(params: ModelParams, batch: EncodedBatch) -> Tensor:
    ids = np.asarray(batch.activity_ids)
    if ids.ndim != 2 or ids.shape[1] != params.config.seq_len:
        raise ValueError(f"expected activity_ids of shape (batch, {params.config.seq_len}), got {ids.shape}")
    emb = tn.embedding_lookup(params["embedding"], ids)  # (B, L, d)
    elapsed = np.asarray(batch.elapsed, dtype=np.float64)[:, :, None]
    return tn.concat([emb, Tensor(elapsed)], axis=2)  # (B, L, d + 1)


def _lstm_layer(params: ModelParams, layer: int, x: Tensor, mode: ForwardMode, p: float) -> Tensor:
    """Run one LSTM layer over x (B, L, n_in); returns all hidden states (B, L, H)."""
    batch, length, n_in = x.shape
    hidden = params[f"lstm{layer}.U_i"].shape[0]
    x_proj = {}
    for gate in GATES:
        xg = x
        if mode.dropout_active and p > 0:
            mask = tn.dropout_mask((batch, 1, n_in), p, mode.rng.child(f"lstm{layer}.W_{gate}"))
            xg = tn.mul(x, mask)
        x_proj[gate] = tn.add(tn.matmul(xg, params[f"lstm{layer}.W_{gate}"]),
                              params[f"lstm{layer}.b_{gate}.bias"])
    h_masks = {
        gate: (tn.dropout_mask((batch, hidden), p, mode.rng.child(f"lstm{layer}.U_{gate}"))
               if mode.dropout_active and p > 0 else None)
        for gate in GATES
    }
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    outputs = []
    for t in range(length):
        pre = {}
        for gate in GATES:
            hg = h if h_masks[gate] is None else tn.mul(h, h_masks[gate])
            pre[gate] = tn.add(x_proj[gate][:, t, :], tn.matmul(hg, params[f"lstm{layer}.U_{gate}"]))
        i_g, f_g, o_g = tn.sigmoid(pre["i"]), tn.sigmoid(pre["f"]), tn.sigmoid(pre["o"])
        g_g = tn.tanh(pre["g"])
        c = tn.add(tn.mul(f_g, c), tn.mul(i_g, g_g))
        h = tn.mul(o_g, tn.tanh(c))
        outputs.append(tn.reshape(h, (batch, 1, hidden)))
    return tn.concat(outputs, axis=1)


def forward(params: ModelParams, batch: EncodedBatch, mode: ForwardMode = DETERMINISTIC) -> Tensor:
    """Raw network output: regression (B, 2) = [ŷ, s]; classification (B, C + 1) = [logits, s]."""
    cfg = params.config
    p = cfg.dropout_p

    if cfg.arch == "cnn":
        x = tn.transpose(_sequence_input(params, batch), (0, 2, 1))  # (B, C, L)
        for i in range(1, len(cfg.conv_channels) + 1):
            x = _drop(x, p, mode, f"conv{i}")
            x = tn.relu(tn.conv1d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"]))
        x = tn.reshape(x, (x.shape[0], -1))
    elif cfg.arch == "lstm":
        x = _sequence_input(params, batch)
        for i in range(1, len(cfg.lstm_hidden) + 1):
            x = _lstm_layer(params, i, x, mode, p)
        x = x[:, -1, :]
    else:
        feats = np.asarray(batch.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != cfg.n_inputs:
            raise ValueError(f"expected features of shape (batch, {cfg.n_inputs}), got {feats.shape}")
        if "feature_mean" in params.meta:
            feats = (feats - np.asarray(params.meta["feature_mean"])) / np.asarray(params.meta["feature_std"])
        x = Tensor(feats)

    for i in range(1, len(cfg.dense_widths) + 1):
        if cfg.arch != "mlp" or i > 1:
            x = _drop(x, p, mode, f"dense{i}")
        x = tn.relu(tn.affine(x, params[f"dense{i}.weight"], params[f"dense{i}.bias"]))
    x = _drop(x, p, mode, "head")
    return tn.affine(x, params["head.weight"], params["head.bias"])


def split_output(out: Tensor, task: str) -> tuple[Tensor, Tensor]:
    """Separate the point/logit part from the log-variance column."""
    if task == "regression":
        return out[:, 0], out[:, 1]
    return out[:, :-1], out[:, -1]


def l2_penalty(params: ModelParams, lam: float) -> Tensor:
    """λ·Σ‖W‖² over weight tensors; biases and the embedding padding row are excluded."""
    if lam < 0:
        raise ValueError("l2 lambda must be nonnegative")
    total = Tensor(0.0)
    if lam == 0:
        return total
    for name in params.weight_names():
        w = params[name]
        if name == "embedding":
            w = w[1:]
        total = tn.add(total, tn.reduce_sum(tn.square(w)))
    return tn.mul(total, lam)
