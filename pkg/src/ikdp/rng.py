"""Seeded random streams.

Bits come from numpy's Philox4x64 counter-based generator keyed by the
64-bit seed; uniforms are its 53-bit doubles. Normals use the Box-Muller
transform on pairs of uniforms (``u1`` mapped to ``(0, 1]``), so a stream is
fully determined by the seed and the sequence of calls.
"""
from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor, default_dtype

_SEED_MASK = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & _SEED_MASK
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, lo: float = 0.0, hi: float = 1.0, shape=()) -> np.ndarray:
        """Float64 draws in ``[lo, hi)``."""
        u = self._gen.random(shape)
        out = lo + (hi - lo) * u
        # rounding can land exactly on hi for wide ranges
        return np.where(out >= hi, np.nextafter(hi, lo), out)

    def normal(self, shape=()) -> np.ndarray:
        """Float64 standard normals via Box-Muller."""
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        n = math.prod(shape)
        pairs = (n + 1) // 2
        u = self._gen.random((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = radius * np.cos(angle)
        z[:, 1] = radius * np.sin(angle)
        z = z.reshape(-1)[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        """Integers uniform over ``{lo, ..., hi}`` (inclusive) by flooring a uniform."""
        u = self._gen.random(shape)
        return np.minimum(lo + np.floor(u * (hi - lo + 1)).astype(np.int64), hi)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self._gen.random(n), kind="stable")

    def derive(self, index: int) -> "Rng":
        return Rng(self.seed ^ int(index))


def randn(rng: Rng, shape) -> Tensor:
    return Tensor(rng.normal(shape).astype(default_dtype()))


def rand_uniform(rng: Rng, lo: float, hi: float, shape) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape).astype(default_dtype()))
