"""Counter-based random streams.

Every draw is produced by a fresh generator seeded from
``(seed, hash(label), counter)``, so a stream's state is fully described by
those three values and named child streams never share draws.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass

import numpy as np


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


@dataclass
class RngStream:
    seed: int
    label: str = "root"
    counter: int = 0

    def child(self, label: str) -> "RngStream":
        """Independent stream named ``<this label>/<label>``, starting at counter 0."""
        return RngStream(self.seed, f"{self.label}/{label}")

    def copy(self) -> "RngStream":
        return copy.copy(self)

    def generator(self) -> np.random.Generator:
        """Generator for the next draw; advances the counter."""
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & (2**63 - 1), spawn_key=(_label_key(self.label), self.counter)
        )
        self.counter += 1
        return np.random.Generator(np.random.PCG64(ss))

    def normal(self, size=None, loc=0.0, scale=1.0) -> np.ndarray:
        return self.generator().normal(loc, scale, size)

    def uniform(self, size=None, low=0.0, high=1.0) -> np.ndarray:
        return self.generator().uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator().integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator().permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator().choice(n, size=size, replace=replace)


def dropout_mask(shape, p: float, rng: RngStream) -> np.ndarray:
    """Entries are 0 with probability ``p`` and ``1 / (1 - p)`` otherwise."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    keep = rng.uniform(size=shape) >= p
    return keep / (1.0 - p)
