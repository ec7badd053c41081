"""Shared independent oracles for the test suite.

These deliberately avoid the library's solver paths: brute-force
enumeration and direct weighted sums only, so they can certify the
optimized implementations.
"""
import itertools

import numpy as np
import pytest

from wassdyn.measure import DiscreteMeasure


def brute_force_wp_uniform(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> float:
    """Minimum transport cost over all permutations (equal-size uniform measures)."""
    n = mu.n_atoms
    assert nu.n_atoms == n
    cost = np.linalg.norm(
        mu.points[:, None, :] - nu.points[None, :, :], axis=2
    ) ** p
    best = min(
        sum(cost[i, perm[i]] for i in range(n)) for perm in itertools.permutations(range(n))
    )
    return float((best / n) ** (1.0 / p))


def random_measure(rng: np.random.Generator, n: int, d: int, scale: float = 2.0,
                   uniform: bool = False) -> DiscreteMeasure:
    pts = rng.normal(size=(n, d)) * scale
    if uniform:
        return DiscreteMeasure.uniform(pts)
    w = rng.random(n) + 0.05
    return DiscreteMeasure(pts, w / w.sum())


@pytest.fixture
def np_rng():
    return np.random.default_rng(20260810)
