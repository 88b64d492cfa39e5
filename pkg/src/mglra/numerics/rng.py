"""Counter-based random streams.

Backed by numpy's Philox bit generator, which is keyed by ``seed`` and
advanced by a 128-bit counter, so ``(seed, counter)`` pins the next draw on
every platform. Named sub-streams derive their key from a SHA-256 of the
parent seed and the name.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed & _MASK64}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RngStream:
    seed: int
    counter: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.counter = int(self.counter) & _MASK64
        bitgen = np.random.Philox(key=self.seed, counter=self.counter)
        self._gen = np.random.Generator(bitgen)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def substream(self, name: str) -> "RngStream":
        return RngStream(derive_seed(self.seed, name))

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def random(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p: float, size) -> np.ndarray:
        return self._gen.random(size) < p
