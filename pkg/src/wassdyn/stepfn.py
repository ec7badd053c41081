"""Piecewise-constant functions of time with exact integrals.

Used for the regularity metadata (sublinearity, Lipschitz and
measure-Lipschitz moduli) attached to velocity fields and constraint tubes.
"""
from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

import numpy as np


class StepFunction:
    """Right-open piecewise-constant function on the real line.

    ``values[k]`` holds on [breaks[k], breaks[k+1]); the first value extends
    to -inf and the last to +inf, so evaluation never falls off the grid.
    """

    __slots__ = ("breaks", "values")

    def __init__(self, breaks: Sequence[float], values: Sequence[float]):
        br = np.asarray(breaks, dtype=float)
        vals = np.asarray(values, dtype=float)
        if br.ndim != 1 or vals.ndim != 1:
            raise ValueError("breaks and values must be one-dimensional")
        if len(vals) != len(br) + 1:
            raise ValueError(
                f"need len(values) == len(breaks) + 1, got {len(vals)} vs {len(br)}"
            )
        if len(br) and np.any(np.diff(br) <= 0):
            raise ValueError("breaks must be strictly increasing")
        br.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "values", vals)

    def __setattr__(self, name, value):
        raise AttributeError("StepFunction is immutable")

    @staticmethod
    def constant(value: float) -> "StepFunction":
        return StepFunction([], [float(value)])

    def __call__(self, t: float) -> float:
        return float(self.values[bisect_right(self.breaks, t)])

    def integral(self, a: float, b: float) -> float:
        """Integral over [a, b]; antisymmetric when a > b."""
        if a > b:
            return -self.integral(b, a)
        knots = [a] + [float(s) for s in self.breaks if a < s < b] + [b]
        total = 0.0
        for lo, hi in zip(knots[:-1], knots[1:]):
            total += self(lo) * (hi - lo)
        return total

    def max_on(self, a: float, b: float) -> float:
        if a > b:
            a, b = b, a
        cand = [self(a)] + [self(s) for s in self.breaks if a < s <= b]
        return max(cand)

    def __add__(self, other: "StepFunction") -> "StepFunction":
        breaks = sorted(set(self.breaks.tolist()) | set(other.breaks.tolist()))
        probes = [-np.inf] + breaks
        values = []
        for k, lo in enumerate(probes):
            t = breaks[0] - 1.0 if k == 0 and breaks else (0.0 if k == 0 else lo)
            values.append(self(t) + other(t))
        return StepFunction(breaks, values)

    def __repr__(self) -> str:
        return f"StepFunction(breaks={self.breaks.tolist()}, values={self.values.tolist()})"


def as_stepfn(spec) -> StepFunction:
    """Coerce a scalar, (breaks, values) pair, or StepFunction."""
    if isinstance(spec, StepFunction):
        return spec
    if isinstance(spec, (int, float)):
        return StepFunction.constant(float(spec))
    breaks, values = spec
    return StepFunction(breaks, values)
