"""Deterministic 64-bit pseudo-random stream (splitmix64).

All randomness in the toolkit flows through this generator so that runs are
reproducible from a single recorded seed, independently of library versions.
The update is the standard splitmix64 step: add the odd constant
0x9E3779B97F4A7C15, then xor-shift-multiply twice.
"""
from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """Seeded splitmix64 stream with float and simplex helpers."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return (z ^ (z >> 31)) & _MASK

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def normal(self) -> float:
        """Standard normal via Box-Muller."""
        u1 = max(self.uniform(), 2.0**-53)
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal_vector(self, d: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(d)])

    def dirichlet_uniform(self, k: int) -> np.ndarray:
        """Flat Dirichlet(1, ..., 1) sample: normalized exponentials."""
        e = np.array([-math.log(max(self.uniform(), 2.0**-53)) for _ in range(k)])
        return e / e.sum()

    def point_in_ball(self, d: int, radius: float = 1.0) -> np.ndarray:
        """Uniform point in the d-ball via direction times radius^(1/d) scaling."""
        v = self.normal_vector(d)
        n = np.linalg.norm(v)
        if n == 0.0:
            v = np.ones(d)
            n = np.linalg.norm(v)
        r = radius * self.uniform() ** (1.0 / d)
        return v / n * r

    def split(self) -> "SplitMix64":
        """Fork an independent child stream."""
        return SplitMix64(self.next_u64())


def fixed_ball_grid(d: int, radius: float, count: int = 64) -> np.ndarray:
    """Deterministic point set in the ball B(0, radius), shared across runs.

    Drawn from a splitmix64 stream with a fixed seed so every invocation,
    in any process, sees the same sample locations.
    """
    rng = SplitMix64(0x5EED0BA11)
    return np.array([rng.point_in_ball(d, radius) for _ in range(count)])
