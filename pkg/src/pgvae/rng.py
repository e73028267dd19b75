"""Seeded random streams.

Every stream is a numpy ``Generator`` backed by PCG64.  Independent
sub-streams are derived by hashing ``(seed, label)`` with BLAKE2b, so the
stream used for e.g. weight initialisation does not depend on how many
draws another part of the program made before it.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """64-bit child seed for ``label`` under ``seed``."""
    h = hashlib.blake2b(f"{seed}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class Rng:
    """A PCG64 stream that can spawn labelled, independent children."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, label: str) -> "Rng":
        return Rng(derive_seed(self.seed, label))

    def normal(self, size) -> np.ndarray:
        return self.gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.gen.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed})"
