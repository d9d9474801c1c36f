"""Annotated transition system for remaining-time prediction.

Each prefix is abstracted to a state (its last k activities, its activity set
or its activity multiset); a state predicts the mean remaining time of the
training prefixes that visited it, and unseen states fall back to the global
training mean.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

ABSTRACTIONS = ("last_k", "set", "multiset")


def _sequence(prefix) -> tuple:
    if getattr(prefix, "history", ()):
        return tuple(prefix.history)
    return tuple(a for a in prefix.activity_ids if a != 0)


def state_key(sequence, abstraction: str = "last_k", k: int = 3) -> tuple:
    seq = tuple(sequence)
    if abstraction == "last_k":
        return seq[-k:] if k > 0 else ()
    if abstraction == "set":
        return tuple(sorted(set(seq)))
    if abstraction == "multiset":
        return tuple(sorted(Counter(seq).items()))
    raise ValueError(f"unknown abstraction {abstraction!r}; expected one of {ABSTRACTIONS}")


@dataclass
class TransitionSystem:
    abstraction: str = "last_k"
    k: int = 3
    states: dict = field(default_factory=dict)  # key -> (mean_remaining_days, visit_count)
    fallback_mean: float = 0.0

    def key(self, prefix) -> tuple:
        return state_key(_sequence(prefix), self.abstraction, self.k)

    def to_json(self) -> str:
        doc = {
            "abstraction": self.abstraction,
            "k": self.k,
            "fallback_mean": self.fallback_mean,
            "states": [{"state": json.loads(json.dumps(list(key))), "mean_remaining_days": m, "visits": c}
                       for key, (m, c) in sorted(self.states.items(), key=lambda kv: repr(kv[0]))],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def build_ts(train_prefixes, abstraction: str = "last_k", k: int = 3) -> TransitionSystem:
    if not train_prefixes:
        raise ValueError("build_ts needs at least one training prefix")
    if abstraction not in ABSTRACTIONS:
        raise ValueError(f"unknown abstraction {abstraction!r}; expected one of {ABSTRACTIONS}")
    ts = TransitionSystem(abstraction, k)
    sums: dict = {}
    counts: dict = {}
    for p in train_prefixes:
        key = ts.key(p)
        sums[key] = sums.get(key, 0.0) + p.target_remaining_days
        counts[key] = counts.get(key, 0) + 1
    ts.states = {key: (sums[key] / counts[key], counts[key]) for key in sums}
    ts.fallback_mean = float(np.mean([p.target_remaining_days for p in train_prefixes]))
    return ts


def predict_ts(ts: TransitionSystem, prefix) -> float:
    entry = ts.states.get(ts.key(prefix))
    return entry[0] if entry is not None else ts.fallback_mean


def predict_many(ts: TransitionSystem, prefixes) -> np.ndarray:
    return np.array([predict_ts(ts, p) for p in prefixes], dtype=np.float64)
