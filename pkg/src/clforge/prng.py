"""Deterministic, label-addressed random streams.

Every stream is a Philox counter-based generator keyed by a hash of
``(seed, label)``.  Two streams derived from the same seed with different
labels share no state, so the order in which they are consumed never
changes what either one produces.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key(seed: int, label: str) -> list[int]:
    digest = hashlib.sha256(f"{seed & SEED_MASK}:{label}".encode()).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 32, 4)]


class Stream:
    """A named random stream.  Use :func:`derive` to construct one."""

    def __init__(self, seed: int, label: str):
        if not label:
            raise ValueError("stream label must be nonempty")
        self.seed = int(seed) & SEED_MASK
        self.label = label
        bitgen = np.random.Philox(np.random.SeedSequence(_key(self.seed, label)))
        self.generator = np.random.Generator(bitgen)

    def child(self, sub: str) -> "Stream":
        """Stream for ``<label>/<sub>``; independent of this stream's draws."""
        return derive(self.seed, f"{self.label}/{sub}")

    def __repr__(self):
        return f"Stream(seed={self.seed}, label={self.label!r})"


def derive(seed: int, label: str) -> Stream:
    return Stream(seed, label)


def gaussian(stream: Stream, count, dtype=np.float64) -> np.ndarray:
    """Standard normal draws; ``count`` may be an int or a shape tuple."""
    return stream.generator.standard_normal(count, dtype=dtype)


def rademacher(stream: Stream, count) -> np.ndarray:
    bits = stream.generator.integers(0, 2, size=count, dtype=np.int8)
    return (2.0 * bits - 1.0).astype(np.float64)


def uniform(stream: Stream, count) -> np.ndarray:
    return stream.generator.random(count)


def permutation(stream: Stream, n: int) -> np.ndarray:
    return stream.generator.permutation(n)
