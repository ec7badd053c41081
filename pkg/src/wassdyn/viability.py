"""Sampled viability and invariance checkers, and a constructive curve builder.

The geometric conditions relate admissible velocities to tangent cones of a
constraint set or tube.  Almost-everywhere time quantifiers are replaced by
deterministic sampling (Chebyshev-style nodes by default) and convex hulls
of cones by finite witness searches; a checker therefore reports
``satisfied`` / ``violated`` / ``inconclusive``, never a proof.

The curve builder follows the dyadic-subdivision construction: on each
dyadic subinterval it integrates candidate selections, keeps the endpoint
closest to the constraint, and projects (recording the jump) when the
tolerance is missed, so failures are observable and quantified instead of
silent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .cones import (
    DEFAULT_CONE_TOL,
    DEFAULT_H_GRID,
    ConeReport,
    TangentDirection,
    contingent_quotient,
    graph_contingent_quotient,
)
from .constraints import ConstraintTube, static_tube
from .dynamics import (
    DEFAULT_SUBSTEP,
    MeasureCurve,
    Selection,
    SetValuedField,
    filippov_track,
    frozen_field,
    random_selection,
    solve_continuity,
    solve_inclusion,
)
from .measure import DiscreteMeasure, SampledMap
from .rng import SplitMix64
from .stepfn import as_stepfn
from .transport import wasserstein_distance

MEMBERSHIP_TOL = 1e-9


def chebyshev_times(t0: float, t1: float, n: int = 32) -> np.ndarray:
    """Chebyshev-like deterministic time samples in (t0, t1)."""
    k = np.arange(n)
    nodes = 0.5 * (1.0 - np.cos(np.pi * (k + 0.5) / n))
    return t0 + (t1 - t0) * nodes


def simplex_grid(k: int, resolution: int = 5) -> list[np.ndarray]:
    """All convex weights with components on the 1/resolution lattice."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(np.array(prefix + [remaining]) / resolution)
            return
        for v in range(remaining + 1):
            rec(prefix + [v], remaining - v, slots - 1)

    rec([], resolution, k)
    return out


@dataclass
class ViabilityReport:
    """Outcome of a sampled geometric-condition check."""

    sampled_points: list  # (t, state index) pairs
    condition_hits: list  # per-point dicts with verdicts and witnesses
    verdict: str  # "satisfied" | "violated" | "inconclusive"
    mode: str = "stationary"

    def to_json_obj(self) -> dict:
        return {
            "verdict": self.verdict,
            "mode": self.mode,
            "sampled_points": [[float(t), int(i)] for t, i in self.sampled_points],
            "condition_hits": self.condition_hits,
        }


@dataclass
class DistanceTrace:
    """Distance-to-constraint samples with their Gronwall envelope."""

    times: np.ndarray
    g_values: np.ndarray
    bound_values: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.g_values) == len(self.bound_values)):
            raise ValueError("trace arrays must share one length")


def _as_tube(constraint, t_span) -> ConstraintTube:
    if isinstance(constraint, ConstraintTube):
        return constraint
    lo, hi = t_span
    if hi <= lo:
        hi = lo + 1.0
    return static_tube(constraint, (lo, hi))


def _direction_field(V: SetValuedField, t: float, nu: DiscreteMeasure, weights) -> SampledMap:
    combined = V.field_for_weights(t, nu, weights)
    return SampledMap(nu, combined(t, nu.points))


def _candidate_weights(V: SetValuedField, resolution: int) -> list[np.ndarray]:
    k = V.n_generators
    vertices = [np.eye(k)[i] for i in range(k)]
    if not V.convexified or k == 1:
        return vertices
    seen = {tuple(np.round(v, 12)) for v in vertices}
    out = list(vertices)
    for a in simplex_grid(k, resolution):
        key = tuple(np.round(a, 12))
        if key not in seen:
            seen.add(key)
            out.append(a)
    return out


def _probe(
    V: SetValuedField,
    tube: ConstraintTube,
    t: float,
    nu: DiscreteMeasure,
    weights,
    mode: str,
    h_grid,
    tol_cone: float,
) -> ConeReport:
    xi = _direction_field(V, t, nu, weights)
    if mode == "stationary":
        return contingent_quotient(nu, xi, tube.at(t), h_grid=h_grid, tol=tol_cone)
    return graph_contingent_quotient(
        t, nu, TangentDirection(1.0, xi), tube, h_grid=h_grid, tol=tol_cone
    )


def check_viability_condition(
    V: SetValuedField,
    constraint,
    time_samples: Sequence[float],
    state_sampler: Callable[[float], Sequence[DiscreteMeasure]],
    mode: str = "stationary",
    simplex_resolution: int = 5,
    h_grid=DEFAULT_H_GRID,
    tol_cone: float = DEFAULT_CONE_TOL,
    membership_tol: float = MEMBERSHIP_TOL,
) -> ViabilityReport:
    """Sampled sufficient-viability condition: some admissible direction is tangent.

    At every sampled (t, nu) each generator, and in convex mode a coarse
    simplex grid of combinations, is probed for cone membership; the first
    member found is recorded as the witness.  ``satisfied`` needs a witness
    at every sample; a sample whose candidates are all non-members yields
    ``violated``; otherwise the report is ``inconclusive`` (finite witness
    searches cannot exhaust a closed convex hull).
    """
    if mode not in ("stationary", "graph"):
        raise ValueError(f"unknown mode {mode!r}")
    t_span = (min(time_samples), max(time_samples))
    tube = _as_tube(constraint, t_span)
    candidates = _candidate_weights(V, simplex_resolution)
    sampled, hits = [], []
    any_unwitnessed = False
    any_all_nonmember = False
    for t in time_samples:
        states = list(state_sampler(t))
        for s_idx, nu in enumerate(states):
            d0 = tube.at(t).distance(nu)
            if d0 > membership_tol:
                raise ValueError(
                    f"sampled state at t={t:.4f} lies outside the constraint (dist {d0:.3e})"
                )
            sampled.append((float(t), s_idx))
            witness = None
            verdicts = []
            for a in candidates:
                rep = _probe(V, tube, t, nu, a, mode, h_grid, tol_cone)
                verdicts.append(rep.verdict)
                if rep.verdict == "member":
                    witness = {
                        "weights": [float(x) for x in a],
                        "min_quotient": rep.min_quotient,
                    }
                    break
            hit = {
                "t": float(t),
                "state": s_idx,
                "witness": witness,
                "candidate_verdicts": verdicts,
            }
            hits.append(hit)
            if witness is None:
                any_unwitnessed = True
                if all(v == "non-member" for v in verdicts):
                    any_all_nonmember = True
    if not any_unwitnessed:
        verdict = "satisfied"
    elif any_all_nonmember:
        verdict = "violated"
    else:
        verdict = "inconclusive"
    return ViabilityReport(sampled, hits, verdict, mode)


def check_invariance_condition(
    V: SetValuedField,
    constraint,
    time_samples: Sequence[float],
    state_sampler: Callable[[float], Sequence[DiscreteMeasure]],
    mode: str = "stationary",
    h_grid=DEFAULT_H_GRID,
    tol_cone: float = DEFAULT_CONE_TOL,
    membership_tol: float = MEMBERSHIP_TOL,
) -> ViabilityReport:
    """Sampled invariance condition: every generator must be tangent.

    For a convexified family the hull is contained in the (convex) closed
    hull of the cone exactly when all generators are, so probing the
    generators suffices.  Any non-member verdict flags ``violated``;
    inconclusive probes propagate.
    """
    if mode not in ("stationary", "graph"):
        raise ValueError(f"unknown mode {mode!r}")
    t_span = (min(time_samples), max(time_samples))
    tube = _as_tube(constraint, t_span)
    k = V.n_generators
    sampled, hits = [], []
    any_nonmember = False
    any_inconclusive = False
    for t in time_samples:
        for s_idx, nu in enumerate(state_sampler(t)):
            d0 = tube.at(t).distance(nu)
            if d0 > membership_tol:
                raise ValueError(
                    f"sampled state at t={t:.4f} lies outside the constraint (dist {d0:.3e})"
                )
            sampled.append((float(t), s_idx))
            verdicts = []
            for g in range(k):
                rep = _probe(V, tube, t, nu, np.eye(k)[g], mode, h_grid, tol_cone)
                verdicts.append(rep.verdict)
            hits.append({"t": float(t), "state": s_idx, "generator_verdicts": verdicts})
            if "non-member" in verdicts:
                any_nonmember = True
            elif "inconclusive" in verdicts:
                any_inconclusive = True
    if any_nonmember:
        verdict = "violated"
    elif any_inconclusive:
        verdict = "inconclusive"
    else:
        verdict = "satisfied"
    return ViabilityReport(sampled, hits, verdict, mode)


# ---------------------------------------------------------------------------
# Constructive viable curves
# ---------------------------------------------------------------------------
@dataclass
class ViableCurveResult:
    """Curve, distance trace and jump accounting of the dyadic construction."""

    curve: MeasureCurve
    trace: DistanceTrace
    jumps: list
    total_jump: float
    success: bool
    tol: float

    def to_json_obj(self) -> dict:
        return {
            "success": self.success,
            "tol": self.tol,
            "total_jump": self.total_jump,
            "jumps": [float(j) for j in self.jumps],
            "g_values": [float(g) for g in self.trace.g_values],
            "times": [float(t) for t in self.trace.times],
        }


def build_viable_curve(
    V: SetValuedField,
    constraint,
    tau: float,
    mu_tau: DiscreteMeasure,
    levels: int,
    grid,
    tol: float,
    n_candidates: int = 16,
    seed: int = 0,
    p: float = 2.0,
    substep: float = DEFAULT_SUBSTEP,
) -> ViableCurveResult:
    """Dyadic viable-curve construction with explicit projection accounting.

    The horizon is split into 2**levels dyadic subintervals along ``grid``.
    Per subinterval, candidate selections (the generator vertices plus
    seeded Dirichlet draws, ``n_candidates`` total) are integrated from the
    current state and the endpoint with least distance to the constraint
    wins.  If that distance exceeds ``tol`` the endpoint is replaced by its
    projection and the jump is recorded.  Success means every recorded
    distance stayed within ``tol`` and the total jump within
    ``tol * 2**levels``.
    """
    grid = np.asarray(grid, dtype=float)
    if abs(grid[0] - tau) > 1e-12:
        raise ValueError(f"grid must start at tau={tau}")
    T = float(grid[-1])
    tube = _as_tube(constraint, (tau, T))
    d0 = tube.at(tau).distance(mu_tau)
    if d0 > tol:
        raise ValueError(f"initial measure violates the constraint (dist {d0:.3e})")
    n_sub = 2**levels
    dyadic = tau + (T - tau) * np.arange(n_sub + 1) / n_sub
    node_idx = []
    for t in dyadic:
        j = int(np.argmin(np.abs(grid - t)))
        if abs(grid[j] - t) > 1e-9:
            raise ValueError(f"dyadic node {t} is not on the integration grid")
        node_idx.append(j)
    rng = SplitMix64(seed)
    k = V.n_generators
    current = mu_tau
    g_values = [d0]
    jumps = []
    times_full = [grid[0]]
    states_full = [mu_tau]
    weight_rows = []
    for seg in range(n_sub):
        sub = grid[node_idx[seg]: node_idx[seg + 1] + 1]
        q_end = tube.at(sub[-1])
        cands = [Selection.constant(sub, np.eye(k)[i]) for i in range(k)]
        if V.convexified:
            while len(cands) < n_candidates:
                cands.append(random_selection(V, sub, rng.split()))
        best = None
        for sel in cands:
            curve = solve_inclusion(V, sel, sub[0], current, sub, substep)
            d = q_end.distance(curve.final)
            if best is None or d < best[0]:
                best = (d, sel, curve)
        d_end, sel, curve = best
        g_values.append(d_end)
        end_state = curve.final
        if d_end > tol:
            end_state = q_end.project(end_state)
            jumps.append(d_end)
        else:
            jumps.append(0.0)
        times_full.extend(curve.times[1:].tolist())
        states_full.extend(curve.states[1:-1])
        states_full.append(end_state)
        weight_rows.extend(sel.weights.tolist())
        current = end_state
    selection = Selection(np.asarray(times_full), np.asarray(weight_rows))
    full_curve = MeasureCurve(np.asarray(times_full), states_full, selection)
    lL = V.l_bound + V.L_bound
    bounds = np.array([
        d0 * math.exp(lL.integral(tau, t)) for t in dyadic
    ])
    trace = DistanceTrace(np.asarray(dyadic), np.asarray(g_values), bounds)
    total_jump = float(np.sum(jumps))
    success = max(g_values) <= tol and total_jump <= tol * n_sub
    return ViableCurveResult(full_curve, trace, jumps, total_jump, success, tol)


def check_empirical_invariance(
    V: SetValuedField,
    constraint,
    tau: float,
    mu_tau: DiscreteMeasure,
    N: int,
    grid,
    seed: int,
    tol: float,
    substep: float = DEFAULT_SUBSTEP,
) -> dict:
    """Integrate N seeded selections and measure constraint violation.

    The generator vertices are always among the N selections (they reach
    the extreme trajectories); the rest are seeded Dirichlet draws.  Passes
    iff every curve stays within ``tol`` of the constraint at every grid
    node.
    """
    grid = np.asarray(grid, dtype=float)
    tube = _as_tube(constraint, (float(grid[0]), float(grid[-1])))
    rng = SplitMix64(seed)
    k = V.n_generators
    selections = [Selection.constant(grid, np.eye(k)[i]) for i in range(min(N, k))]
    selections += [random_selection(V, grid, rng.split()) for _ in range(N - len(selections))]
    worst = 0.0
    per_curve = []
    for sel in selections:
        curve = solve_inclusion(V, sel, tau, mu_tau, grid, substep)
        dists = [tube.at(t).distance(mu) for t, mu in zip(curve.times, curve.states)]
        c_worst = float(max(dists))
        per_curve.append(c_worst)
        worst = max(worst, c_worst)
    return {
        "passed": worst <= tol,
        "worst": worst,
        "tol": tol,
        "n_curves": N,
        "seed": seed,
        "per_curve": per_curve,
    }


def gronwall_monitor(
    trace: DistanceTrace,
    l_bound,
    L_bound,
    slack_rel: float = 0.05,
    slack_abs: float = 1e-9,
) -> dict:
    """Check g(t) <= g(s) exp(int_s^t (l+L)) + slack over all node pairs."""
    l_fn = as_stepfn(l_bound)
    L_fn = as_stepfn(L_bound)
    times = trace.times
    g = trace.g_values
    max_excess = 0.0
    worst = None
    for i in range(len(times)):
        for j in range(i + 1, len(times)):
            growth = math.exp(l_fn.integral(times[i], times[j]) +
                              L_fn.integral(times[i], times[j]))
            bound = g[i] * growth * (1.0 + slack_rel) + slack_abs
            excess = g[j] - bound
            if excess > max_excess:
                max_excess = excess
                worst = (float(times[i]), float(times[j]))
    return {"passed": max_excess <= 0.0, "max_excess": float(max_excess), "worst_pair": worst}


def necessary_condition_probe(
    V: SetValuedField,
    constraint,
    viable_curve: MeasureCurve,
    sample_times: Optional[Sequence[float]] = None,
    h_grid=DEFAULT_H_GRID,
    tol_cone: float = DEFAULT_CONE_TOL,
    membership_tol: float = 1e-6,
) -> list[dict]:
    """Necessary-condition probe along a produced viable curve.

    At each sampled node some generator should pass the graph-cone test
    with unit time rate; times where none does are flagged.  States that
    drifted outside the constraint (e.g. by forced projection) are reported
    as outside and skipped.
    """
    t0, t1 = float(viable_curve.times[0]), float(viable_curve.times[-1])
    tube = _as_tube(constraint, (t0, t1))
    if sample_times is None:
        sample_times = viable_curve.times[:-1]
    k = V.n_generators
    out = []
    for t in sample_times:
        nu = viable_curve.state_at(float(t))
        if tube.at(t).distance(nu) > membership_tol:
            out.append({"t": float(t), "outside": True, "any_member": False,
                        "reports": []})
            continue
        reports = []
        any_member = False
        best_idx = None
        for gidx in range(k):
            xi = _direction_field(V, float(t), nu, np.eye(k)[gidx])
            rep = graph_contingent_quotient(
                float(t), nu, TangentDirection(1.0, xi), tube,
                h_grid=h_grid, tol=tol_cone, membership_tol=membership_tol,
            )
            reports.append(rep)
            if rep.verdict == "member" and not any_member:
                any_member = True
                best_idx = gidx
        out.append({
            "t": float(t),
            "outside": False,
            "any_member": any_member,
            "witness_generator": best_idx,
            "reports": reports,
        })
    return out


# ---------------------------------------------------------------------------
# Infinitesimal diagnostics
# ---------------------------------------------------------------------------
def initial_velocity_diagnostic(
    V: SetValuedField,
    tau: float,
    mu_tau: DiscreteMeasure,
    weights,
    h_grid: Sequence[float],
    R: float,
    p: float = 2.0,
    steps_per_h: int = 4,
    substep: float = DEFAULT_SUBSTEP,
) -> list[tuple[float, float]]:
    """Difference quotients of an admissible curve against its initial velocity.

    For the admissible velocity v = sum_k weights_k v^k(tau, mu_tau), a
    solution is constructed by Filippov-tracking the time-frozen field, and
    W_p(mu(tau+h), (Id + h v)#mu_tau) / h is reported per h.  Small
    quotients witness that prescribed initial velocities are approximately
    realized by admissible curves.
    """
    field0 = V.field_for_weights(tau, mu_tau, np.asarray(weights, dtype=float))
    frozen = frozen_field(field0, tau)
    v_vals = field0(tau, mu_tau.points)
    results = []
    for h in h_grid:
        sub_grid = np.linspace(tau, tau + h, steps_per_h + 1)
        ref = solve_continuity(frozen, tau, mu_tau, sub_grid, substep)
        tracked, _ = filippov_track(
            V, ref, tau, mu_tau, sub_grid, R, p=p, ref_field=frozen, substep=substep
        )
        target = DiscreteMeasure(mu_tau.points + h * v_vals, mu_tau.weights)
        results.append((float(h), wasserstein_distance(tracked.final, target, p) / h))
    return results


def reachable_velocity_search(
    V: SetValuedField,
    curve: MeasureCurve,
    tau: float,
    h_list: Sequence[float],
    p: float = 2.0,
    resolution: int = 5,
    polish: bool = True,
) -> dict:
    """Search admissible velocities matching a given solution infinitesimally.

    Minimizes over convex weights the best difference quotient
    min_h W_p(mu(tau+h), (Id + h v_a)#mu_tau) / h, scanning a simplex grid
    then polishing with a constrained local solve.  Every h must be a node
    offset of the curve.
    """
    mu_tau = curve.state_at(tau)
    fields = V.generator_fields(tau, mu_tau)
    gen_vals = np.array([f(tau, mu_tau.points) for f in fields])
    k = len(fields)
    targets = [(float(h), curve.state_at(tau + h)) for h in h_list]

    def quotient(a):
        a = np.asarray(a, dtype=float)
        v = np.tensordot(a, gen_vals, axes=1)
        best = np.inf
        for h, state in targets:
            pushed = DiscreteMeasure(mu_tau.points + h * v, mu_tau.weights)
            best = min(best, wasserstein_distance(state, pushed, p) / h)
        return float(best)

    candidates = [np.eye(k)[i] for i in range(k)]
    if V.convexified and k > 1:
        candidates += simplex_grid(k, resolution)
    table = [(a.tolist(), quotient(a)) for a in candidates]
    best_a, best_q = min(
        ((np.asarray(a), q) for a, q in table), key=lambda item: item[1]
    )
    if polish and V.convexified and k > 1:
        res = minimize(
            quotient,
            best_a,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * k,
            constraints=[{"type": "eq", "fun": lambda a: float(np.sum(a) - 1.0)}],
            options={"maxiter": 200, "ftol": 1e-12},
        )
        if res.success and res.fun < best_q:
            a = np.clip(res.x, 0.0, None)
            best_a, best_q = a / a.sum(), float(res.fun)
    return {
        "weights": [float(x) for x in best_a],
        "quotient": float(best_q),
        "grid_table": table,
    }
