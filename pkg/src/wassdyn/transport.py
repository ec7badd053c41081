"""Exact p-Wasserstein distances, optimal plans, and distances between clouds.

Distances between discrete measures are finite linear programs over the
transport polytope.  Equal-size uniform measures take a Hungarian-algorithm
fast path; everything else is solved as an exact LP (HiGHS simplex), which
returns a vertex plan whose marginals hold to machine precision.
"""
from __future__ import annotations

import json
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.sparse import csr_matrix

from .measure import DiscreteMeasure, SampledMap, lp_seminorm, pushforward

# Marginal feasibility tolerance for transport plans.
MARGINAL_TOL = 1e-10
# Weights this close to exactly uniform take the assignment fast path.
WEIGHT_FASTPATH_TOL = 1e-15


class TransportPlan:
    """Nonnegative coupling matrix between two discrete measures.

    Row sums reproduce the source weights and column sums the target
    weights, each within ``MARGINAL_TOL``.
    """

    __slots__ = ("source", "target", "matrix")

    def __init__(self, source: DiscreteMeasure, target: DiscreteMeasure, matrix):
        m = np.array(matrix, dtype=float)
        if m.shape != (source.n_atoms, target.n_atoms):
            raise ValueError(
                f"plan shape {m.shape} != ({source.n_atoms}, {target.n_atoms})"
            )
        if np.any(m < -MARGINAL_TOL):
            raise ValueError("plan has negative mass")
        m = np.maximum(m, 0.0)
        row_err = np.abs(m.sum(axis=1) - source.weights).max()
        col_err = np.abs(m.sum(axis=0) - target.weights).max()
        if row_err > MARGINAL_TOL or col_err > MARGINAL_TOL:
            raise ValueError(
                f"marginal violation: rows {row_err:.3e}, cols {col_err:.3e}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("TransportPlan is immutable")

    def cost(self, p: float) -> float:
        """p-th root of the plan's transport cost."""
        diff = self.source.points[:, None, :] - self.target.points[None, :, :]
        c = np.linalg.norm(diff, axis=2) ** p
        return float(np.sum(self.matrix * c) ** (1.0 / p))

    def to_json_obj(self) -> dict:
        """Sparse triplet encoding {source_idx, target_idx, mass}."""
        triplets = []
        for i, j in zip(*np.nonzero(self.matrix)):
            triplets.append(
                {"source_idx": int(i), "target_idx": int(j), "mass": float(self.matrix[i, j])}
            )
        return {"n_source": self.source.n_atoms, "n_target": self.target.n_atoms,
                "triplets": triplets}

    @staticmethod
    def from_json_obj(obj: dict, source: DiscreteMeasure, target: DiscreteMeasure) -> "TransportPlan":
        m = np.zeros((source.n_atoms, target.n_atoms))
        for t in obj["triplets"]:
            m[int(t["source_idx"]), int(t["target_idx"])] = float(t["mass"])
        return TransportPlan(source, target, m)


class MeasureCloud:
    """A nonempty finite family of discrete measures."""

    __slots__ = ("members",)

    def __init__(self, members: Sequence[DiscreteMeasure]):
        members = tuple(members)
        if not members:
            raise ValueError("cloud must be nonempty")
        dims = {m.dim for m in members}
        if len(dims) != 1:
            raise ValueError(f"cloud members have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "members", members)

    def __setattr__(self, name, value):
        raise AttributeError("MeasureCloud is immutable")

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i: int) -> DiscreteMeasure:
        return self.members[i]


def _cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> np.ndarray:
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    return np.linalg.norm(diff, axis=2) ** p


def _solve_assignment(mu, nu, cost):
    # equal-size uniform measures: optimal plan is a permutation / n
    n = mu.n_atoms
    ri, ci = linear_sum_assignment(cost)
    matrix = np.zeros((n, n))
    matrix[ri, ci] = 1.0 / n
    value = float(cost[ri, ci].sum() / n)
    return value, matrix


def _solve_lp(mu, nu, cost):
    # generic transport LP: min <c, g>, g >= 0, marginals fixed
    n, m = cost.shape
    rows, cols, data = [], [], []
    for i in range(n):
        base = i * m
        for j in range(m):
            rows.append(i)
            cols.append(base + j)
            data.append(1.0)
            rows.append(n + j)
            cols.append(base + j)
            data.append(1.0)
    a_eq = csr_matrix((data, (rows, cols)), shape=(n + m, n * m))
    b_eq = np.concatenate([mu.weights, nu.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    matrix = res.x.reshape(n, m)
    return float(res.x @ cost.ravel()), matrix


def wasserstein(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    p: float,
    force_lp: bool = False,
) -> tuple[float, TransportPlan]:
    """Exact W_p distance and an optimal plan between two discrete measures.

    Parameters
    ----------
    mu, nu : DiscreteMeasure
        Measures of equal dimension.
    p : float
        Order of the distance, p > 1.
    force_lp : bool
        Skip the Hungarian fast path (used by exactness cross-checks).

    Returns
    -------
    (distance, plan)
        ``distance`` is the p-th root of the minimal transport cost and
        ``plan`` attains it.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if p <= 1.0:
        raise ValueError(f"exponent p must exceed 1, got {p}")
    cost = _cost_matrix(mu, nu, p)
    uniform = (
        mu.n_atoms == nu.n_atoms
        and np.allclose(mu.weights, 1.0 / mu.n_atoms, rtol=0.0, atol=WEIGHT_FASTPATH_TOL)
        and np.allclose(nu.weights, 1.0 / nu.n_atoms, rtol=0.0, atol=WEIGHT_FASTPATH_TOL)
    )
    if uniform and not force_lp:
        value, matrix = _solve_assignment(mu, nu, cost)
    else:
        value, matrix = _solve_lp(mu, nu, cost)
    plan = TransportPlan(mu, nu, matrix)
    return float(max(value, 0.0) ** (1.0 / p)), plan


def wasserstein_distance(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float) -> float:
    """Distance only; see :func:`wasserstein`."""
    return wasserstein(mu, nu, p)[0]


def coupling_from_maps(
    mu: DiscreteMeasure, zeta: SampledMap, xi: SampledMap, p: float
) -> tuple[TransportPlan, float]:
    """The coupling (zeta, xi)#mu and its p-cost.

    The cost ||xi - zeta||_{L^p(mu)} certifies an upper bound for the
    Wasserstein distance between the two image measures.
    """
    if not zeta.base.same_support(mu) or not xi.base.same_support(mu):
        raise ValueError("both maps must be sampled on the given measure")
    src = pushforward(mu, zeta)
    tgt = pushforward(mu, xi)
    plan = TransportPlan(src, tgt, np.diag(mu.weights))
    diff = SampledMap(mu, xi.values - zeta.values)
    return plan, lp_seminorm(mu, diff, p)


def dist_to_cloud(
    mu: DiscreteMeasure, cloud: MeasureCloud, p: float
) -> tuple[float, int]:
    """Distance from a measure to the closest cloud member (lowest index wins ties)."""
    best = np.inf
    best_idx = 0
    for k, member in enumerate(cloud):
        d = wasserstein_distance(mu, member, p)
        if d < best:
            best = d
            best_idx = k
    return float(best), best_idx


def hausdorff(cloud_a: MeasureCloud, cloud_b: MeasureCloud, p: float) -> float:
    """Hausdorff distance between two finite measure clouds."""
    d_ab = max(dist_to_cloud(mu, cloud_b, p)[0] for mu in cloud_a)
    d_ba = max(dist_to_cloud(nu, cloud_a, p)[0] for nu in cloud_b)
    return float(max(d_ab, d_ba))


def delta_local(
    cloud_a: MeasureCloud,
    cloud_b: MeasureCloud,
    center: DiscreteMeasure,
    R: float,
    p: float,
) -> float:
    """One-sided, localized Hausdorff excess of A over B near ``center``.

    Supremum over the members of A lying within W_p-distance R of ``center``
    of their distance to B.  Empty restriction returns 0 (infimum over
    epsilon of an empty containment condition).
    """
    if R <= 0:
        raise ValueError("localization radius must be positive")
    worst = 0.0
    for mu in cloud_a:
        if wasserstein_distance(mu, center, p) <= R:
            worst = max(worst, dist_to_cloud(mu, cloud_b, p)[0])
    return float(worst)


def plan_to_json(plan: TransportPlan) -> str:
    return json.dumps(plan.to_json_obj(), sort_keys=True)
