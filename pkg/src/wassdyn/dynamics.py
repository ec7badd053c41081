"""Characteristic flows, continuity equations and continuity inclusions.

Measures evolve by pushing their atoms through RK4-integrated characteristic
flows.  Set-valued right-hand sides are finitely generated: K velocity-field
factories evaluated against the running measure, with admissible velocities
the convex combinations of the generators.  Selections are piecewise
constant on the integration grid.

Explicit (forward) coupling: within each grid step the measure argument of
every generator is frozen at the step's start state, so the per-step error
is O(dt^2) and runs are reproducible.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .measure import DiscreteMeasure, moment_p
from .rng import SplitMix64, fixed_ball_grid
from .stepfn import StepFunction, as_stepfn
from .transport import wasserstein_distance

# Default RK4 substep for characteristic flows.
DEFAULT_SUBSTEP = 1e-2
# Convex weights must sum to one within this tolerance.
WEIGHT_SUM_TOL = 1e-12


def _parallel_map(fn, items, threads: Optional[int]):
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Velocity fields
# ---------------------------------------------------------------------------
class VelocityField:
    """A vector field (t, x) -> R^d with regularity metadata.

    ``fn`` must accept a batch of points of shape (n, d) and return the same
    shape.  ``m_bound`` is a sublinearity modulus (|v(t,x)| <= m(t)(1+|x|))
    and ``l_bound`` a spatial Lipschitz modulus; both are spot-checked by
    :meth:`validate`, not proven.
    """

    __slots__ = ("fn", "m_bound", "l_bound", "name")

    def __init__(self, fn: Callable, m_bound=None, l_bound=None, name: str = "field"):
        self.fn = fn
        self.m_bound = as_stepfn(m_bound) if m_bound is not None else None
        self.l_bound = as_stepfn(l_bound) if l_bound is not None else None
        self.name = name

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        batch = x[None, :] if single else x
        out = np.asarray(self.fn(t, batch), dtype=float)
        if out.shape != batch.shape:
            raise ValueError(f"field returned shape {out.shape}, expected {batch.shape}")
        return out[0] if single else out

    def validate(
        self,
        dim: int,
        t_range: tuple[float, float],
        samples: int = 1000,
        radius: float = 10.0,
        seed: int = 1,
        slack: float = 1e-6,
        moment_offset: float = 0.0,
    ) -> None:
        """Spot-check the declared bounds on random (t, x) draws.

        ``moment_offset`` widens the sublinearity budget to
        m(t)(1 + |x| + offset), matching measure-dependent hypotheses.
        """
        if self.m_bound is None or self.l_bound is None:
            raise ValueError("cannot validate a field without declared bounds")
        rng = SplitMix64(seed)
        for _ in range(samples):
            t = rng.uniform_in(*t_range)
            x = rng.point_in_ball(dim, radius)
            v = self(t, x)
            budget = self.m_bound(t) * (1.0 + np.linalg.norm(x) + moment_offset)
            if np.linalg.norm(v) > budget * (1.0 + slack) + slack:
                raise ValueError(
                    f"{self.name}: sublinearity bound violated at t={t:.4f}, |x|={np.linalg.norm(x):.4f}"
                )
        for _ in range(samples // 2):
            t = rng.uniform_in(*t_range)
            x = rng.point_in_ball(dim, radius)
            y = rng.point_in_ball(dim, radius)
            gap = np.linalg.norm(x - y)
            if gap < 1e-9:
                continue
            ratio = np.linalg.norm(self(t, x) - self(t, y)) / gap
            if ratio > self.l_bound(t) * (1.0 + slack) + slack:
                raise ValueError(
                    f"{self.name}: Lipschitz bound violated at t={t:.4f} (ratio {ratio:.4f})"
                )


def combine_fields(fields: Sequence[VelocityField], weights: np.ndarray, name="combo") -> VelocityField:
    """Convex combination of velocity fields (pointwise in (t, x))."""
    weights = np.asarray(weights, dtype=float)
    active = [(w, f) for w, f in zip(weights, fields) if w > 0.0]

    def fn(t, x):
        out = np.zeros_like(x)
        for w, f in active:
            out += w * f(t, x)
        return out

    return VelocityField(fn, name=name)


def frozen_field(field: VelocityField, t_freeze: float, name="frozen") -> VelocityField:
    """Time-frozen copy: (t, x) -> field(t_freeze, x)."""
    return VelocityField(
        lambda t, x: field(t_freeze, x),
        m_bound=field.m_bound,
        l_bound=field.l_bound,
        name=name,
    )


def dcc_distance(v, w, dim: int, t: float = 0.0, k_max: int = 8) -> float:
    """Local-uniform-convergence metric between two fields, as a diagnostic.

    Approximates sum_k 2^-k min(1, sup_{B(0,k)} |v - w|) at a fixed time,
    with each ball supremum sampled on a deterministic point set.  Bounded
    by 1; zero iff the fields agree on every sample.
    """
    total = 0.0
    for k in range(1, k_max + 1):
        pts = np.vstack([fixed_ball_grid(dim, float(k)), np.zeros((1, dim))])
        gap = float(np.linalg.norm(v(t, pts) - w(t, pts), axis=1).max())
        total += 2.0**-k * min(1.0, gap)
    return total


# -- built-in field families -------------------------------------------------
def constant_field(c) -> VelocityField:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    m = float(np.linalg.norm(c))
    return VelocityField(
        lambda t, x: np.broadcast_to(c, x.shape).copy(),
        m_bound=m,
        l_bound=0.0,
        name="constant",
    )


def linear_field(matrix) -> VelocityField:
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    spec = float(np.linalg.norm(a, 2))
    return VelocityField(
        lambda t, x: x @ a.T,
        m_bound=spec,
        l_bound=spec,
        name="linear",
    )


def attraction_field(center, radius: float, rate: float) -> VelocityField:
    """Pull toward the ball B(center, radius) at the given rate.

    Vanishes inside the ball; x -> x - proj(x) is 1-Lipschitz, so the
    Lipschitz modulus is ``rate``.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))

    def fn(t, x):
        rel = x - center
        dist = np.linalg.norm(rel, axis=1, keepdims=True)
        scale = np.maximum(1.0 - radius / np.maximum(dist, 1e-300), 0.0)
        return -rate * rel * scale

    m = rate * max(1.0, float(np.linalg.norm(center)))
    return VelocityField(fn, m_bound=m, l_bound=rate, name="attraction")


def interaction_drift(mu: DiscreteMeasure, coef: float) -> VelocityField:
    """Linear attraction toward the barycenter of ``mu`` (repulsion if coef < 0).

    The measure dependence enters only through the (frozen) barycenter, so
    the supremum distance between fields at two measures is bounded by
    |coef| times their Wasserstein distance.
    """
    mean = (mu.weights[:, None] * mu.points).sum(axis=0)
    return VelocityField(
        lambda t, x: -coef * (x - mean),
        m_bound=abs(coef) * max(1.0, float(np.linalg.norm(mean))),
        l_bound=abs(coef),
        name="interaction",
    )


# ---------------------------------------------------------------------------
# Set-valued fields, selections, curves
# ---------------------------------------------------------------------------
class SetValuedField:
    """Finitely generated admissible-velocity family V(t, mu).

    ``generators`` are factories (t, mu) -> VelocityField.  When
    ``convexified`` is true, the admissible set is the convex hull of the
    generators' values; otherwise only the generators themselves.
    ``m_bound``/``l_bound``/``L_bound`` are shared sublinearity, spatial
    Lipschitz and measure-Lipschitz moduli for every admissible field.
    """

    __slots__ = ("generators", "convexified", "m_bound", "l_bound", "L_bound")

    def __init__(self, generators, convexified=True, m_bound=1.0, l_bound=1.0, L_bound=0.0):
        generators = tuple(generators)
        if not generators:
            raise ValueError("need at least one generator")
        self.generators = generators
        self.convexified = bool(convexified)
        self.m_bound = as_stepfn(m_bound)
        self.l_bound = as_stepfn(l_bound)
        self.L_bound = as_stepfn(L_bound)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    def generator_fields(self, t: float, mu: DiscreteMeasure) -> list[VelocityField]:
        return [g(t, mu) for g in self.generators]

    def field_for_weights(self, t: float, mu: DiscreteMeasure, weights) -> VelocityField:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (self.n_generators,):
            raise ValueError(
                f"expected {self.n_generators} weights, got shape {weights.shape}"
            )
        if np.any(weights < -WEIGHT_SUM_TOL) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a convex combination")
        fields = self.generator_fields(t, mu)
        if self.n_generators == 1:
            return fields[0]
        return combine_fields(fields, weights)

    def validate(
        self, mu: DiscreteMeasure, t_range: tuple[float, float], p: float,
        samples: int = 1000, seed: int = 1,
    ) -> None:
        """Spot-check every generator's bounds at the given anchor measure."""
        offset = moment_p(mu, p)
        ts = [t_range[0], 0.5 * (t_range[0] + t_range[1]), t_range[1]]
        for k, gen in enumerate(self.generators):
            for t0 in ts:
                field = gen(t0, mu)
                probe = VelocityField(
                    field.fn, m_bound=self.m_bound, l_bound=self.l_bound,
                    name=f"generator[{k}]",
                )
                probe.validate(
                    mu.dim, t_range, samples=max(10, samples // (3 * self.n_generators)),
                    seed=seed + k, moment_offset=offset,
                )


class Selection:
    """Piecewise-constant convex weights over the generators.

    ``weights[i]`` applies on [time_grid[i], time_grid[i+1]).
    """

    __slots__ = ("time_grid", "weights")

    def __init__(self, time_grid, weights):
        grid = np.asarray(time_grid, dtype=float)
        w = np.atleast_2d(np.asarray(weights, dtype=float))
        if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("time grid must be strictly increasing with >= 2 nodes")
        if w.shape[0] != len(grid) - 1:
            raise ValueError(
                f"need one weight row per interval: {w.shape[0]} rows for {len(grid) - 1} intervals"
            )
        if np.any(w < -WEIGHT_SUM_TOL):
            raise ValueError("selection weights must be nonnegative")
        sums = w.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > WEIGHT_SUM_TOL):
            raise ValueError("selection weight rows must sum to one")
        grid.setflags(write=False)
        w.setflags(write=False)
        self.time_grid = grid
        self.weights = w

    @property
    def n_generators(self) -> int:
        return self.weights.shape[1]

    def weights_at(self, t: float) -> np.ndarray:
        idx = int(np.searchsorted(self.time_grid, t, side="right") - 1)
        idx = min(max(idx, 0), self.weights.shape[0] - 1)
        return self.weights[idx]

    def is_vertex_valued(self, tol: float = WEIGHT_SUM_TOL) -> bool:
        return bool(np.all(np.max(self.weights, axis=1) >= 1.0 - tol))

    @staticmethod
    def constant(time_grid, weights) -> "Selection":
        grid = np.asarray(time_grid, dtype=float)
        w = np.asarray(weights, dtype=float)
        return Selection(grid, np.tile(w, (len(grid) - 1, 1)))

    def restrict(self, a: float, b: float) -> "Selection":
        """Selection induced on the subinterval [a, b]."""
        inner = [t for t in self.time_grid if a < t < b]
        grid = np.array([a] + inner + [b])
        rows = [self.weights_at(0.5 * (lo + hi)) for lo, hi in zip(grid[:-1], grid[1:])]
        return Selection(grid, np.array(rows))


class MeasureCurve:
    """A discrete-time curve of measures with an optional driving selection."""

    __slots__ = ("times", "states", "selection")

    def __init__(self, times, states: Sequence[DiscreteMeasure], selection: Optional[Selection] = None):
        t = np.asarray(times, dtype=float)
        states = tuple(states)
        if len(states) != len(t):
            raise ValueError(f"{len(states)} states for {len(t)} times")
        if len(t) == 0 or (len(t) > 1 and np.any(np.diff(t) <= 0)):
            raise ValueError("times must be nonempty and strictly increasing")
        t.setflags(write=False)
        self.times = t
        self.states = states
        self.selection = selection

    def __len__(self) -> int:
        return len(self.times)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > tol:
            raise KeyError(f"time {t} is not a node of this curve")
        return idx

    def state_at(self, t: float, tol: float = 1e-9) -> DiscreteMeasure:
        return self.states[self.index_of(t, tol)]

    @property
    def initial(self) -> DiscreteMeasure:
        return self.states[0]

    @property
    def final(self) -> DiscreteMeasure:
        return self.states[-1]


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------
def flow_step(
    v: VelocityField, t0: float, t1: float, x, substep: float = DEFAULT_SUBSTEP
) -> np.ndarray:
    """RK4 approximation of the characteristic flow of ``v`` from t0 to t1.

    Accepts a single point (d,) or a batch (n, d).  The step is split into
    uniform substeps no longer than ``substep``; local error is O(h^5).
    """
    if t1 < t0:
        raise ValueError(f"backward step requested: {t0} -> {t1}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    state = x[None, :].copy() if single else x.copy()
    span = t1 - t0
    if span > 0.0:
        n_sub = max(1, int(math.ceil(span / substep - 1e-12)))
        h = span / n_sub
        for k in range(n_sub):
            t = t0 + k * h
            k1 = v(t, state)
            k2 = v(t + 0.5 * h, state + 0.5 * h * k1)
            k3 = v(t + 0.5 * h, state + 0.5 * h * k2)
            k4 = v(t + h, state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(state)):
                bad = state[~np.all(np.isfinite(state), axis=1)][0]
                raise FloatingPointError(
                    f"non-finite flow state at t={t + h:.6f}, x={bad}"
                )
    return state[0] if single else state


def solve_continuity(
    v: VelocityField,
    tau: float,
    mu_tau: DiscreteMeasure,
    grid,
    substep: float = DEFAULT_SUBSTEP,
) -> MeasureCurve:
    """Solve the continuity equation by pushing atoms along the flow of ``v``."""
    grid = np.asarray(grid, dtype=float)
    if abs(grid[0] - tau) > 1e-12:
        raise ValueError(f"grid must start at tau={tau}, starts at {grid[0]}")
    states = [mu_tau]
    pts = mu_tau.points.copy()
    for lo, hi in zip(grid[:-1], grid[1:]):
        pts = flow_step(v, lo, hi, pts, substep)
        states.append(DiscreteMeasure(pts, mu_tau.weights))
    return MeasureCurve(grid, states)


def selection_field(
    V: SetValuedField,
    sel: Selection,
    state_provider: Callable[[float], DiscreteMeasure],
) -> VelocityField:
    """The admissible field t, x -> sum_k w_k(t) v^k(t, mu(t))(x).

    ``state_provider`` supplies the running curve state at each time.
    Requires convexified images unless the selection is vertex-valued.
    """
    if sel.n_generators != V.n_generators:
        raise ValueError(
            f"selection has {sel.n_generators} weight slots for {V.n_generators} generators"
        )
    if not V.convexified and not sel.is_vertex_valued():
        raise ValueError("non-convexified family admits only vertex-valued selections")

    def fn(t, x):
        mu = state_provider(t)
        field = V.field_for_weights(t, mu, sel.weights_at(t))
        return field(t, x)

    return VelocityField(fn, name="selection")


def solve_inclusion(
    V: SetValuedField,
    sel: Selection,
    tau: float,
    mu_tau: DiscreteMeasure,
    grid,
    substep: float = DEFAULT_SUBSTEP,
) -> MeasureCurve:
    """Integrate the trajectory-selection pair with explicit measure coupling.

    Within each grid interval the generators see the interval's start state;
    their time dependence stays live inside the RK4 substeps.
    """
    if sel.n_generators != V.n_generators:
        raise ValueError(
            f"selection has {sel.n_generators} weight slots for {V.n_generators} generators"
        )
    if not V.convexified and not sel.is_vertex_valued():
        raise ValueError("non-convexified family admits only vertex-valued selections")
    grid = np.asarray(grid, dtype=float)
    if abs(grid[0] - tau) > 1e-12:
        raise ValueError(f"grid must start at tau={tau}, starts at {grid[0]}")
    states = [mu_tau]
    current = mu_tau
    for lo, hi in zip(grid[:-1], grid[1:]):
        field = V.field_for_weights(lo, current, sel.weights_at(lo))
        pts = flow_step(field, lo, hi, current.points, substep)
        current = DiscreteMeasure(pts, mu_tau.weights)
        states.append(current)
    return MeasureCurve(grid, states, sel)


def random_selection(V: SetValuedField, grid, rng: SplitMix64) -> Selection:
    """Flat-Dirichlet weights per interval (vertex draws when not convexified)."""
    grid = np.asarray(grid, dtype=float)
    k = V.n_generators
    rows = []
    for _ in range(len(grid) - 1):
        if V.convexified:
            rows.append(rng.dirichlet_uniform(k))
        else:
            row = np.zeros(k)
            row[rng.next_u64() % k] = 1.0
            rows.append(row)
    return Selection(grid, np.array(rows))


def reachable_cloud(
    V: SetValuedField,
    tau: float,
    t: float,
    mu_tau: DiscreteMeasure,
    N: int,
    grid,
    seed: int,
    substep: float = DEFAULT_SUBSTEP,
    threads: Optional[int] = None,
):
    """Sample the reachable set at time t with N seeded selections.

    The first min(N, K) selections are the constant generator vertices
    (reaching the bang-bang extremes); the rest draw flat-Dirichlet weights
    per interval from the seeded stream.  Returns (cloud, selections); the
    k-th member is the state at t of the curve driven by the k-th selection.
    """
    if N < 1:
        raise ValueError("need at least one sample")
    grid = np.asarray(grid, dtype=float)
    if abs(grid[0] - tau) > 1e-12:
        raise ValueError(f"grid must start at tau={tau}")
    idx = int(np.argmin(np.abs(grid - t)))
    if abs(grid[idx] - t) > 1e-9:
        raise ValueError(f"target time {t} is not a grid node")
    rng = SplitMix64(seed)
    k = V.n_generators
    selections = [
        Selection.constant(grid, np.eye(k)[i]) for i in range(min(N, k))
    ]
    selections += [random_selection(V, grid, rng.split()) for _ in range(N - len(selections))]

    def run(sel):
        if idx == 0:
            return mu_tau
        return solve_inclusion(V, sel, tau, mu_tau, grid[: idx + 1], substep).states[idx]

    members = _parallel_map(run, selections, threads)
    from .transport import MeasureCloud

    return MeasureCloud(members), selections


# ---------------------------------------------------------------------------
# Mismatch and Filippov tracking
# ---------------------------------------------------------------------------
def _simplex_lstsq(values: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Exact least-squares convex weights by active-set enumeration.

    ``values`` has shape (K, S, d); minimizes ||target - sum a_k values_k||_2^2
    over the simplex.  K is small, so all 2^K - 1 supports are tried.
    """
    k = values.shape[0]
    flat = values.reshape(k, -1)
    b = target.ravel()
    best = None
    best_obj = np.inf
    for mask in range(1, 1 << k):
        support = [i for i in range(k) if mask & (1 << i)]
        m = flat[support].T
        ata = m.T @ m
        kkt = np.zeros((len(support) + 1, len(support) + 1))
        kkt[:-1, :-1] = ata
        kkt[:-1, -1] = 1.0
        kkt[-1, :-1] = 1.0
        rhs = np.concatenate([m.T @ b, [1.0]])
        try:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        except np.linalg.LinAlgError:
            continue
        a_sub = sol[:-1]
        if np.any(a_sub < -1e-10):
            continue
        a = np.zeros(k)
        a[support] = np.maximum(a_sub, 0.0)
        s = a.sum()
        if s <= 0:
            continue
        a /= s
        obj = float(np.sum((flat.T @ a - b) ** 2))
        if obj < best_obj - 1e-15:
            best_obj = obj
            best = a
    return best if best is not None else np.full(k, 1.0 / k)


def _simplex_inf_lp(values: np.ndarray, target: np.ndarray) -> Optional[np.ndarray]:
    """Convex weights minimizing the coordinatewise sup norm, as an LP."""
    k = values.shape[0]
    flat = values.reshape(k, -1)
    b = target.ravel()
    n = flat.shape[1]
    # variables [a_1..a_K, t]
    c = np.zeros(k + 1)
    c[-1] = 1.0
    a_ub = np.zeros((2 * n, k + 1))
    a_ub[:n, :k] = flat.T
    a_ub[:n, -1] = -1.0
    a_ub[n:, :k] = -flat.T
    a_ub[n:, -1] = -1.0
    b_ub = np.concatenate([b, -b])
    a_eq = np.zeros((1, k + 1))
    a_eq[0, :k] = 1.0
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
        bounds=[(0.0, None)] * k + [(0.0, None)], method="highs",
    )
    if res.status != 0:
        return None
    a = np.maximum(res.x[:k], 0.0)
    return a / a.sum()


def mismatch(
    V: SetValuedField,
    w,
    t: float,
    nu: DiscreteMeasure,
    R: float,
    return_weights: bool = False,
):
    """Local mismatch between a target field and the admissible set at (t, nu).

    The target ``w`` may be a VelocityField / callable or an array of values
    on the support of ``nu``.  Sample points are the support of ``nu`` plus
    a fixed deterministic grid of 64 points in B(0, R) (support only when
    ``w`` is given as raw values).  The reported value is the best maximal
    euclidean deviation over the sample points among candidate weights:
    each vertex, the exact simplex least-squares fit, and the sup-norm LP
    fit.  Exact (zero) whenever the target is representable.
    """
    if R <= 0:
        raise ValueError("localization radius must be positive")
    if callable(w):
        pts = np.vstack([nu.points, fixed_ball_grid(nu.dim, R)])
        target = np.asarray(w(t, pts) if isinstance(w, VelocityField) else
                            np.array([np.atleast_1d(w(t, x)) for x in pts]), dtype=float)
    else:
        pts = nu.points
        target = np.asarray(w, dtype=float)
        if target.shape != pts.shape:
            raise ValueError(f"target values shape {target.shape} != support {pts.shape}")
    fields = V.generator_fields(t, nu)
    values = np.array([f(t, pts) for f in fields])
    k = len(fields)

    def sup_dev(a):
        resid = target - np.tensordot(a, values, axes=1)
        return float(np.linalg.norm(resid, axis=1).max())

    candidates = [np.eye(k)[i] for i in range(k)]
    if V.convexified and k > 1:
        candidates.append(_simplex_lstsq(values, target))
        lp = _simplex_inf_lp(values, target)
        if lp is not None:
            candidates.append(lp)
    best_a = min(candidates, key=sup_dev)
    best = sup_dev(best_a)
    if return_weights:
        return best, best_a
    return best


def filippov_track(
    V: SetValuedField,
    ref_curve: MeasureCurve,
    tau: float,
    mu_tau: DiscreteMeasure,
    grid,
    R: float,
    p: float = 2.0,
    ref_field=None,
    n_candidates: int = 8,
    seed: int = 0,
    substep: float = DEFAULT_SUBSTEP,
) -> tuple[MeasureCurve, dict]:
    """Track a reference curve with an admissible solution, greedily.

    When the reference's driving field is available, each interval uses the
    convex weights minimizing the mismatch against it at the reference
    state (the Filippov construction); otherwise candidate selections per
    interval (vertices plus seeded Dirichlet draws) are integrated and the
    endpoint closest to the reference state in W_p wins.

    Returns the tracked curve and a trace with per-node distances
    ``wp``, per-interval mismatches ``eta`` and the running integral
    ``eta_integral``.
    """
    grid = np.asarray(grid, dtype=float)
    if abs(grid[0] - tau) > 1e-12:
        raise ValueError(f"grid must start at tau={tau}")
    ref_idx = [ref_curve.index_of(t) for t in grid]
    rng = SplitMix64(seed)
    k = V.n_generators
    states = [mu_tau]
    current = mu_tau
    rows = []
    eta = []
    wp = [wasserstein_distance(mu_tau, ref_curve.states[ref_idx[0]], p)]
    for step, (lo, hi) in enumerate(zip(grid[:-1], grid[1:])):
        nu_lo = ref_curve.states[ref_idx[step]]
        nu_hi = ref_curve.states[ref_idx[step + 1]]
        if ref_field is not None:
            eta_k, a = mismatch(V, ref_field, lo, nu_lo, R, return_weights=True)
            field = V.field_for_weights(lo, current, a)
            pts = flow_step(field, lo, hi, current.points, substep)
            nxt = DiscreteMeasure(pts, mu_tau.weights)
        else:
            cands = [np.eye(k)[i] for i in range(k)]
            if V.convexified:
                cands += [rng.dirichlet_uniform(k) for _ in range(max(0, n_candidates - k))]
            best = None
            for a in cands:
                field = V.field_for_weights(lo, current, a)
                pts = flow_step(field, lo, hi, current.points, substep)
                cand = DiscreteMeasure(pts, mu_tau.weights)
                d = wasserstein_distance(cand, nu_hi, p)
                if best is None or d < best[0]:
                    best = (d, a, cand)
            _, a, nxt = best
            ref_vel = (nu_hi.points - nu_lo.points) / (hi - lo)
            eta_k = mismatch(V, ref_vel, lo, nu_lo, R)
        rows.append(a)
        eta.append(eta_k)
        current = nxt
        states.append(current)
        wp.append(wasserstein_distance(current, ref_curve.states[ref_idx[step + 1]], p))
    sel = Selection(grid, np.array(rows))
    curve = MeasureCurve(grid, states, sel)
    deltas = np.diff(grid)
    eta = np.asarray(eta)
    trace = {
        "times": grid,
        "wp": np.asarray(wp),
        "eta": eta,
        "eta_integral": np.concatenate([[0.0], np.cumsum(eta * deltas)]),
    }
    return curve, trace


# ---------------------------------------------------------------------------
# Traces and a priori envelopes
# ---------------------------------------------------------------------------
def moment_trace(curve: MeasureCurve, p: float) -> np.ndarray:
    """p-th moment at each curve node."""
    return np.array([moment_p(mu, p) for mu in curve.states])


def ac_trace(curve: MeasureCurve, p: float) -> np.ndarray:
    """W_p between consecutive curve nodes (one entry per interval)."""
    return np.array([
        wasserstein_distance(a, b, p)
        for a, b in zip(curve.states[:-1], curve.states[1:])
    ])


def moment_envelope(mp_tau: float, m_bound: StepFunction, tau: float, times) -> np.ndarray:
    """Gronwall moment envelope (1 + M_p(mu_tau)) exp(2 int m) - 1.

    Follows from |dx/dt| <= m(t)(1 + |x| + M_p) and the L^p triangle
    inequality, which give d/dt (1 + M_p) <= 2 m(t) (1 + M_p).
    """
    return np.array([
        (1.0 + mp_tau) * math.exp(2.0 * m_bound.integral(tau, t)) - 1.0 for t in times
    ])


def ac_envelope_constant(mp_tau: float, m_bound: StepFunction, tau: float, T: float) -> float:
    """The constant C with W_p(mu(t1), mu(t2)) <= (1 + C) int_{t1}^{t2} m.

    The field norm obeys ||v(t)||_{L^p} <= m(t)(1 + 2 M_p(mu(t))), so C is
    twice the moment envelope's terminal value.
    """
    m_sup = (1.0 + mp_tau) * math.exp(2.0 * m_bound.integral(tau, T)) - 1.0
    return 2.0 * m_sup


def filippov_envelope(
    V: SetValuedField, trace: dict, tau: float, w0: float
) -> np.ndarray:
    """Gronwall tracking envelope exp(int (l+L)) (W_p(tau) + int eta)."""
    times = trace["times"]
    out = []
    for idx, t in enumerate(times):
        growth = math.exp(
            V.l_bound.integral(tau, t) + V.L_bound.integral(tau, t)
        )
        out.append(growth * (w0 + trace["eta_integral"][idx]))
    return np.array(out)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
def curve_to_csv(curve: MeasureCurve, g_values=None) -> str:
    """Rows: t, atom index, weight, coordinates [, g]."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["t", "atom", "weight"] + [f"x{i+1}" for i in range(curve.states[0].dim)]
    if g_values is not None:
        header.append("g")
    writer.writerow(header)
    for node, (t, mu) in enumerate(zip(curve.times, curve.states)):
        for i, (w, x) in enumerate(zip(mu.weights, mu.points)):
            row = [repr(float(t)), i, repr(float(w))] + [repr(float(c)) for c in x]
            if g_values is not None:
                row.append(repr(float(g_values[node])))
            writer.writerow(row)
    return buf.getvalue()


def curve_to_json_obj(curve: MeasureCurve) -> dict:
    obj = {
        "times": [float(t) for t in curve.times],
        "states": [mu.to_json_obj() for mu in curve.states],
    }
    if curve.selection is not None:
        obj["selection"] = {
            "time_grid": curve.selection.time_grid.tolist(),
            "weights": curve.selection.weights.tolist(),
        }
    return obj
