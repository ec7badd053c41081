"""Concrete constraint sets over measures, with computable distance/projection.

Two families are provided.  Support constraints confine the atoms of a
measure to a compact convex region (ball or halfspace polytope); their
measure-level distance is exactly the weighted atomwise distance, attained
by atomwise projection.  Epigraph constraints couple a measure with an
extra scalar coordinate that must dominate a functional of the measure;
their projection is vertical (raise the scalar), which is exact for
membership and zero-distance semantics but only an upper bound on the true
metric projection.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .measure import DiscreteMeasure
from .rng import SplitMix64
from .stepfn import as_stepfn

# Projections must land this close to the set.
PROJECT_TOL = 1e-9
# Dykstra iteration parameters for polytope projections.
DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 10_000


# ---------------------------------------------------------------------------
# Point-level regions
# ---------------------------------------------------------------------------
class Ball:
    """Closed euclidean ball B(center, radius)."""

    __slots__ = ("center", "radius")

    def __init__(self, center, radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        center.setflags(write=False)
        self.center = center
        self.radius = float(radius)

    @property
    def dim(self) -> int:
        return len(self.center)

    def project_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        rel = x - self.center
        norms = np.linalg.norm(rel, axis=1, keepdims=True)
        scale = np.minimum(1.0, self.radius / np.maximum(norms, 1e-300))
        return self.center + rel * scale

    def dist_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.maximum(np.linalg.norm(x - self.center, axis=1) - self.radius, 0.0)

    def boundary_mask(self, x: np.ndarray, tol: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.abs(np.linalg.norm(x - self.center, axis=1) - self.radius) <= tol


class Polytope:
    """Intersection of halfspaces a_j . x <= b_j; must be nonempty and bounded."""

    __slots__ = ("normals", "offsets")

    def __init__(self, normals, offsets, check: bool = True):
        a = np.atleast_2d(np.asarray(normals, dtype=float))
        b = np.atleast_1d(np.asarray(offsets, dtype=float))
        if a.shape[0] != b.shape[0]:
            raise ValueError("one offset per halfspace required")
        norms = np.linalg.norm(a, axis=1)
        if np.any(norms <= 0):
            raise ValueError("halfspace normals must be nonzero")
        a.setflags(write=False)
        b.setflags(write=False)
        self.normals = a
        self.offsets = b
        if check:
            self._check_nonempty_bounded()

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def _check_nonempty_bounded(self) -> None:
        d = self.dim
        zeros = np.zeros(d)
        feas = linprog(zeros, A_ub=self.normals, b_ub=self.offsets,
                       bounds=[(None, None)] * d, method="highs")
        if feas.status != 0:
            raise ValueError("polytope is empty")
        for i in range(d):
            for sign in (1.0, -1.0):
                c = np.zeros(d)
                c[i] = sign
                res = linprog(c, A_ub=self.normals, b_ub=self.offsets,
                              bounds=[(None, None)] * d, method="highs")
                if res.status == 3:
                    raise ValueError("polytope is unbounded")

    def contains_points(self, x: np.ndarray, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all(x @ self.normals.T <= self.offsets + tol, axis=1)

    def project_point(self, x: np.ndarray) -> np.ndarray:
        """Dykstra's alternating projections onto the halfspaces."""
        x = np.asarray(x, dtype=float)
        if self.contains_points(x[None])[0]:
            return x.copy()
        m = self.normals.shape[0]
        sq = np.sum(self.normals**2, axis=1)
        y = x.copy()
        corrections = np.zeros((m, len(x)))
        for _ in range(DYKSTRA_MAX_ITER):
            prev = y.copy()
            for j in range(m):
                z = y + corrections[j]
                excess = float(z @ self.normals[j] - self.offsets[j])
                proj = z - (max(excess, 0.0) / sq[j]) * self.normals[j]
                corrections[j] = z - proj
                y = proj
            if np.linalg.norm(y - prev) <= DYKSTRA_TOL:
                return y
        raise RuntimeError("Dykstra projection did not converge")

    def project_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.array([self.project_point(row) for row in x])

    def dist_points(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.norm(x - self.project_points(x), axis=1)

    def active_halfspaces(self, x: np.ndarray, tol: float) -> list[int]:
        x = np.asarray(x, dtype=float)
        norms = np.linalg.norm(self.normals, axis=1)
        slack = (self.offsets - x @ self.normals.T) / norms
        return [j for j in range(len(self.offsets)) if slack[j] <= tol]


# ---------------------------------------------------------------------------
# Measure-level constraint sets
# ---------------------------------------------------------------------------
class ConstraintSet:
    """Distance-and-projection interface for constraint sets of measures."""

    def distance(self, mu: DiscreteMeasure) -> float:
        raise NotImplementedError

    def project(self, mu: DiscreteMeasure) -> DiscreteMeasure:
        raise NotImplementedError

    def contains(self, mu: DiscreteMeasure, tol: float = PROJECT_TOL) -> bool:
        return self.distance(mu) <= tol


class SupportConstraint(ConstraintSet):
    """Measures whose support lies in a compact convex region.

    The W_p distance to this set equals the weighted atomwise distance
    (sum_i w_i dist(x_i, K)^p)^(1/p): any coupling with a supported measure
    pays at least dist(x_i, K) per unit mass at x_i, and the atomwise
    projection attains that floor.
    """

    def __init__(self, region, p: float):
        if p <= 1.0:
            raise ValueError(f"exponent p must exceed 1, got {p}")
        self.region = region
        self.p = float(p)

    def distance(self, mu: DiscreteMeasure) -> float:
        d = self.region.dist_points(mu.points)
        return float(np.sum(mu.weights * d**self.p) ** (1.0 / self.p))

    def project(self, mu: DiscreteMeasure) -> DiscreteMeasure:
        return DiscreteMeasure(self.region.project_points(mu.points), mu.weights)


def support_distance(mu: DiscreteMeasure, region, p: float) -> float:
    return SupportConstraint(region, p).distance(mu)


def support_project(mu: DiscreteMeasure, region) -> DiscreteMeasure:
    return DiscreteMeasure(region.project_points(mu.points), mu.weights)


# -- functionals for epigraph constraints -------------------------------------
class MeasureFunctional:
    """Named real-valued functional on discrete measures."""

    def __init__(self, name: str, fn: Callable[[DiscreteMeasure], float]):
        self.name = name
        self.fn = fn

    def __call__(self, mu: DiscreteMeasure) -> float:
        return float(self.fn(mu))


def second_moment_functional() -> MeasureFunctional:
    """W(mu) = int |x|^2 dmu, the squared 2-moment."""
    return MeasureFunctional(
        "second-moment",
        lambda mu: float(np.sum(mu.weights * np.sum(mu.points**2, axis=1))),
    )


def potential_functional(coefficients: Sequence[float]) -> MeasureFunctional:
    """W(mu) = int U dmu with U(x) = sum_k c_k |x|^k."""
    coeffs = [float(c) for c in coefficients]

    def fn(mu):
        r = np.linalg.norm(mu.points, axis=1)
        u = sum(c * r**k for k, c in enumerate(coeffs))
        return float(np.sum(mu.weights * u))

    return MeasureFunctional("potential", fn)


# Tolerance for the shared lifted coordinate across atoms.
ALPHA_TOL = 1e-9


def lift_measure(mu: DiscreteMeasure, alpha: float) -> DiscreteMeasure:
    """The product measure mu x delta_alpha as atoms in R^(d+1)."""
    col = np.full((mu.n_atoms, 1), float(alpha))
    return DiscreteMeasure(np.hstack([mu.points, col]), mu.weights)


def split_lifted(lifted: DiscreteMeasure) -> tuple[DiscreteMeasure, float]:
    """Invert :func:`lift_measure`; rejects inconsistent last coordinates."""
    if lifted.dim < 2:
        raise ValueError("lifted measures live in dimension >= 2")
    alphas = lifted.points[:, -1]
    if alphas.max() - alphas.min() > ALPHA_TOL:
        raise ValueError("atoms do not share the lifted coordinate")
    base = DiscreteMeasure(lifted.points[:, :-1], lifted.weights)
    return base, float(alphas[0])


class EpigraphConstraint(ConstraintSet):
    """Lifted epigraph of a functional: measures mu x delta_alpha with W(mu) <= alpha.

    Projection is vertical only (alpha is raised to W(mu)); the reported
    distance W(mu) - alpha is an upper bound on the true metric distance,
    which may also move mu.  Membership and zero-distance semantics are
    exact, which is all the viability checkers rely on.

    The built-in second-moment functional has W_p-compact sublevels; the
    potential-energy variant is accepted without verifying that hypothesis.
    """

    def __init__(self, functional: MeasureFunctional):
        self.functional = functional

    def distance(self, lifted: DiscreteMeasure) -> float:
        base, alpha = split_lifted(lifted)
        return max(self.functional(base) - alpha, 0.0)

    def project(self, lifted: DiscreteMeasure) -> DiscreteMeasure:
        base, alpha = split_lifted(lifted)
        w = self.functional(base)
        if w <= alpha:
            return lifted
        return lift_measure(base, w)


def epigraph_distance(lifted: DiscreteMeasure, wset: EpigraphConstraint) -> float:
    return wset.distance(lifted)


def epigraph_project(lifted: DiscreteMeasure, wset: EpigraphConstraint) -> DiscreteMeasure:
    return wset.project(lifted)


# ---------------------------------------------------------------------------
# Time-dependent tubes
# ---------------------------------------------------------------------------
class ConstraintTube:
    """Time-indexed constraint sets Q(t) on a horizon [t0, t1].

    ``sampler`` is a pure function of t; ``modulus`` is the declared
    one-sided (left) absolute-continuity modulus, checked empirically by
    :func:`tube_left_ac_check` rather than proven.
    """

    def __init__(self, sampler: Callable[[float], ConstraintSet], modulus=0.0,
                 t_span: tuple[float, float] = (0.0, 1.0)):
        self.sampler = sampler
        self.modulus = as_stepfn(modulus)
        if t_span[1] <= t_span[0]:
            raise ValueError("tube horizon must have positive length")
        self.t_span = (float(t_span[0]), float(t_span[1]))

    def at(self, t: float) -> ConstraintSet:
        return self.sampler(self.clamp(t))

    def clamp(self, t: float) -> float:
        return min(max(t, self.t_span[0]), self.t_span[1])


def static_tube(Q: ConstraintSet, t_span=(0.0, 1.0)) -> ConstraintTube:
    return ConstraintTube(lambda t: Q, 0.0, t_span)


def ball_tube(center, r0: float, rate: float, p: float, t_span=(0.0, 1.0)) -> ConstraintTube:
    """Support-ball tube with radius r0 + rate * t.

    A shrinking tube (rate < 0) is left absolutely continuous with modulus
    |rate|: supported measures can track the boundary radially at that
    speed.  A growing tube needs no inward motion, modulus 0.
    """
    t0, t1 = t_span
    if r0 + rate * t0 <= 0 or r0 + rate * t1 <= 0:
        raise ValueError("tube radius must stay positive on the horizon")

    def sampler(t):
        return SupportConstraint(Ball(center, r0 + rate * t), p)

    return ConstraintTube(sampler, abs(min(rate, 0.0)), t_span)


def tube_at(tube: ConstraintTube, t: float) -> ConstraintSet:
    return tube.at(t)


def tube_left_ac_check(
    tube: ConstraintTube,
    state_sampler: Callable[[float, SplitMix64], DiscreteMeasure],
    n_pairs: int = 16,
    n_states: int = 8,
    seed: int = 7,
    slack: float = 1e-6,
) -> dict:
    """Empirical one-sided absolute-continuity check on sampled time pairs.

    For random tau <= t, measures drawn in Q(tau) must lie within
    int_tau^t modulus + slack of Q(t).  Returns the worst excess found.
    """
    rng = SplitMix64(seed)
    t0, t1 = tube.t_span
    worst = 0.0
    rows = []
    for _ in range(n_pairs):
        a = rng.uniform_in(t0, t1)
        b = rng.uniform_in(t0, t1)
        lo, hi = (a, b) if a <= b else (b, a)
        budget = tube.modulus.integral(lo, hi)
        q_hi = tube.at(hi)
        excess = 0.0
        for _ in range(n_states):
            mu = state_sampler(lo, rng)
            excess = max(excess, q_hi.distance(mu) - budget)
        worst = max(worst, excess)
        rows.append({"tau": lo, "t": hi, "budget": budget, "excess": excess})
    return {"passed": worst <= slack, "max_excess": worst, "pairs": rows}


def ball_state_sampler(tube: ConstraintTube, n_atoms: int = 4) -> Callable:
    """Random supported measures for support-ball tubes (testing helper)."""

    def sample(t: float, rng: SplitMix64) -> DiscreteMeasure:
        region = tube.at(t).region
        pts = np.array([
            region.center + rng.point_in_ball(region.dim, region.radius)
            for _ in range(n_atoms)
        ])
        w = rng.dirichlet_uniform(n_atoms)
        return DiscreteMeasure(pts, w)

    return sample
