"""Experiment configuration: a nested YAML mapping merged over built-in defaults.

Precedence, lowest to highest: defaults < config file < ``--set key=value``
overrides < dedicated command-line flags (``--seed``, ``--output-dir``).
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .errors import ConfigError
from .losses import LOSS_KINDS
from .training import EARLY_STOP_MODES

OUTPUT_ROOT_ENV = "PPM_UNCERTAINTY_OUTPUT_ROOT"
TECHNIQUES = ("plain", "hetero", "dropout", "bayes")

DEFAULT_SYNTH = {
    "kind": "process",
    "n_cases": 400,
    "start_activity": "register",
    "activity_chain": {
        "register": {"check": 0.6, "review": 0.4},
        "check": {"decide": 1.0},
        "review": {"ask_info": 0.5, "decide": 0.5},
        "ask_info": {"review": 0.3, "decide": 0.7},
        "decide": {"END": 1.0},
    },
    "step_duration_law": {
        "check": [0.5, 0.1],
        "review": [2.0, 1.0],
        "ask_info": [3.0, 2.0],
        "decide": [1.0, 0.3],
    },
    "outcome_threshold_days": 4.0,
    "outcome_positive_if": "below",
    "interarrival_days": 0.25,
    "max_events": 50,
    # 1D regression generator (kind: regression1d)
    "n_samples": 2000,
    "noise_knots": [0.0, 1.0],
    "noise_sigmas": [0.1, 0.1],
    "gap_regions": [],
    "n_test": 1000,
}

DEFAULTS: dict = {
    "seed": None,
    "output_dir": "runs/default",
    "data": {
        "source": None,
        "schema": {},
        "max_bad_rows": 0,
        "synth": DEFAULT_SYNTH,
        "test_fraction": 0.2,
        "debias": True,
        "task": "regression",
        "max_len": 10,
        "fraction": 1.0,
    },
    "model": {
        "arch": "cnn",
        "embed_dim": 8,
        "conv_channels": [16, 16],
        "kernel_width": 3,
        "lstm_hidden": [16, 16],
        "dense_widths": [64, 64],
        "dropout_p": 0.1,
        "l2_lambda": 0.0,
    },
    "loss": {"kind": "hetero", "T_softmax": 20, "alpha_elu": 1.0},
    "train": {
        "epochs": 100,
        "batch_size": 64,
        "lr": 1e-3,
        "early_stop": "plateau",
        "plateau_patience": 10,
        "plateau_tol": 1e-4,
        "val_fraction": 0.1,
        "lr_schedule": "constant",
    },
    "inference": {"mode": "mc", "T": 50},
    "eval": {
        "thresholds": [1.0, 0.75, 0.5, 0.25, 0.1, 0.05],
        "levels": [0.5, 0.75, 0.9, 0.95, 0.99],
        "window": 5000,
        "stride": 1000,
        "fractions": [0.05, 0.1, 0.25, 0.5, 1.0, "all"],
        "ts_abstraction": "last_k",
        "ts_k": 3,
    },
    "sweep": {
        "fractions": [1.0],
        "techniques": list(TECHNIQUES),
        "repeats": 3,
        "workers": 1,
        "dropout_p": 0.05,
        "l2_lambda": 1e-4,
    },
}

# keys whose values are free-form mappings, not validated key by key
_OPEN_KEYS = {("data", "schema"), ("data", "synth")}


def _merge(base: dict, override: Mapping, path=()) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base[key], dict) and here not in _OPEN_KEYS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {'.'.join(here)!r} must be a mapping")
            out[key] = _merge(base[key], value, here)
        elif here in _OPEN_KEYS and isinstance(value, Mapping) and isinstance(base[key], dict):
            merged = copy.deepcopy(base[key])
            merged.update(copy.deepcopy(dict(value)))
            out[key] = merged
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """``a.b.c=value`` (value parsed as YAML) into a nested mapping."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    dotted, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw != "" else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of override {text!r}: {exc}") from exc
    node: Any = value
    for part in reversed(dotted.strip().split(".")):
        if not part:
            raise ConfigError(f"empty key component in override {text!r}")
        node = {part: node}
    return node


def load_config(path: Optional[str | Path] = None, overrides=(), seed: Optional[int] = None,
                output_dir: Optional[str] = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} does not exist")
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {str(p)!r} is not valid YAML: {exc}") from exc
        if not isinstance(doc, Mapping):
            raise ConfigError("config file must contain a mapping at top level")
        cfg = _merge(cfg, doc)
    for text in overrides:
        cfg = _merge(cfg, parse_override(text))
    if seed is not None:
        cfg["seed"] = seed
    if output_dir is not None:
        cfg["output_dir"] = output_dir
    validate(cfg)
    return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: Mapping) -> None:
    seed = cfg["seed"]
    _require(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0,
             "a nonnegative integer seed is required (config key 'seed' or --seed)")
    data, model, loss, train = cfg["data"], cfg["model"], cfg["loss"], cfg["train"]
    _require(data["task"] in ("regression", "classification"), f"unknown task {data['task']!r}")
    _require(0 < float(data["test_fraction"]) < 1, "data.test_fraction must be in (0, 1)")
    _require(0 < float(data["fraction"]) <= 1, "data.fraction must be in (0, 1]")
    _require(int(data["max_len"]) >= 1, "data.max_len must be positive")
    _require(model["arch"] in ("cnn", "lstm"), "model.arch must be 'cnn' or 'lstm' for event-log data")
    _require(0 <= float(model["dropout_p"]) < 1, "model.dropout_p must be in [0, 1)")
    _require(loss["kind"] in LOSS_KINDS, f"loss.kind must be one of {LOSS_KINDS}")
    is_cls_loss = loss["kind"] in ("ce", "attenuated_ce")
    _require(is_cls_loss == (data["task"] == "classification"),
             f"loss.kind {loss['kind']!r} does not match task {data['task']!r}")
    _require(train["early_stop"] in EARLY_STOP_MODES, f"train.early_stop must be one of {EARLY_STOP_MODES}")
    _require(1 <= int(train["epochs"]), "train.epochs must be >= 1")
    _require(cfg["inference"]["mode"] in ("mc", "deterministic"), "inference.mode must be 'mc' or 'deterministic'")
    _require(int(cfg["inference"]["T"]) >= 2, "inference.T must be >= 2")
    sweep = cfg["sweep"]
    bad = [t for t in sweep["techniques"] if t not in TECHNIQUES]
    _require(not bad, f"unknown sweep techniques {bad}; expected a subset of {TECHNIQUES}")
    _require(int(sweep["repeats"]) >= 1 and int(sweep["workers"]) >= 1, "sweep.repeats and sweep.workers must be >= 1")
    _require(all(0 < float(f) <= 1 for f in sweep["fractions"]), "sweep.fractions must lie in (0, 1]")
    if data["source"] is not None:
        _require(Path(data["source"]).is_file(), f"data.source {data['source']!r} does not exist")


def config_hash(cfg: Mapping) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


def output_root(cfg: Mapping) -> Path:
    out = Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def dump(cfg: Mapping) -> str:
    return yaml.safe_dump(json.loads(json.dumps(cfg)), sort_keys=True)
