import numpy as np
import pytest

from wassdyn.constraints import Ball, SupportConstraint, ball_tube
from wassdyn.dynamics import (
    Selection,
    SetValuedField,
    ac_envelope_constant,
    constant_field,
    filippov_track,
    interaction_drift,
    linear_field,
    solve_inclusion,
)
from wassdyn.measure import DiscreteMeasure, moment_p
from wassdyn.viability import (
    DistanceTrace,
    build_viable_curve,
    check_empirical_invariance,
    check_invariance_condition,
    check_viability_condition,
    chebyshev_times,
    gronwall_monitor,
    initial_velocity_diagnostic,
    necessary_condition_probe,
    reachable_velocity_search,
    simplex_grid,
)

BALL = SupportConstraint(Ball([0.0, 0.0], 1.0), 2.0)


def family(*kinds):
    gens = []
    l = 0.0
    m = 0.0
    for kind in kinds:
        if kind == "inward":
            gens.append(lambda t, mu: linear_field([[-1.0, 0.0], [0.0, -1.0]]))
            l = max(l, 1.0)
            m = max(m, 1.0)
        elif kind == "outward":
            gens.append(lambda t, mu: linear_field([[1.0, 0.0], [0.0, 1.0]]))
            l = max(l, 1.0)
            m = max(m, 1.0)
        elif kind == "outward2":
            gens.append(lambda t, mu: linear_field([[2.0, 0.0], [0.0, 2.0]]))
            l = max(l, 2.0)
            m = max(m, 2.0)
        elif kind == "zero":
            gens.append(lambda t, mu: constant_field([0.0, 0.0]))
        else:
            raise ValueError(kind)
    return SetValuedField(gens, convexified=True, m_bound=max(m, 1e-6),
                          l_bound=l, L_bound=0.0)


def ball_samples(t):
    # interior start plus boundary atoms on the axes
    states = [DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])]
    for axis in range(2):
        for sign in (1.0, -1.0):
            x = np.zeros(2)
            x[axis] = sign
            states.append(DiscreteMeasure.dirac(x))
    return states


class TestSimplexGrid:
    def test_counts_and_normalization(self):
        grid = simplex_grid(3, 4)
        assert len(grid) == 15  # C(4+2, 2)
        for a in grid:
            assert a.min() >= 0 and abs(a.sum() - 1.0) <= 1e-12


class TestViabilityCondition:
    def test_zero_field_always_satisfied(self):
        V = family("zero")
        report = check_viability_condition(V, BALL, chebyshev_times(0, 1, 4), ball_samples)
        assert report.verdict == "satisfied"
        for hit in report.condition_hits:
            assert hit["witness"] is not None

    def test_inward_field_satisfied(self):
        V = family("inward")
        report = check_viability_condition(V, BALL, chebyshev_times(0, 1, 4), ball_samples)
        assert report.verdict == "satisfied"

    def test_outward_field_violated_at_boundary(self):
        V = family("outward")
        report = check_viability_condition(V, BALL, chebyshev_times(0, 1, 4), ball_samples)
        assert report.verdict == "violated"

    def test_sampler_outside_constraint_rejected(self):
        V = family("zero")
        bad = lambda t: [DiscreteMeasure.dirac([3.0, 0.0])]
        with pytest.raises(ValueError, match="outside"):
            check_viability_condition(V, BALL, [0.0], bad)

    def test_graph_mode_growing_tube(self):
        tube = ball_tube([0.0, 0.0], 1.0, 0.5, 2.0, t_span=(0.0, 1.0))
        V = family("zero")
        report = check_viability_condition(
            V, tube, chebyshev_times(0, 1, 4), ball_samples, mode="graph"
        )
        assert report.verdict == "satisfied"

    def test_graph_mode_shrinking_tube_violated(self):
        tube = ball_tube([0.0, 0.0], 1.0, -0.5, 2.0, t_span=(0.0, 1.0))
        V = family("zero")

        def boundary(t):
            r = 1.0 - 0.5 * t
            return [DiscreteMeasure.dirac([r, 0.0])]

        report = check_viability_condition(
            V, tube, chebyshev_times(0, 1, 4), boundary, mode="graph"
        )
        assert report.verdict == "violated"


class TestInvarianceCondition:
    def test_inward_family_satisfied(self):
        report = check_invariance_condition(
            family("inward"), BALL, chebyshev_times(0, 1, 4), ball_samples
        )
        assert report.verdict == "satisfied"

    def test_mixed_family_violated(self):
        report = check_invariance_condition(
            family("inward", "outward"), BALL, chebyshev_times(0, 1, 4), ball_samples
        )
        assert report.verdict == "violated"

    def test_zero_family_satisfied(self):
        report = check_invariance_condition(
            family("zero"), BALL, chebyshev_times(0, 1, 4), ball_samples
        )
        assert report.verdict == "satisfied"


class TestBuildViableCurve:
    def test_contraction_keeps_distance_zero(self):
        V = family("inward")
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        grid = np.linspace(0, 1, 33)
        result = build_viable_curve(V, BALL, 0.0, mu0, 3, grid, tol=1e-6, seed=1)
        assert result.success
        assert max(result.trace.g_values) <= 1e-6
        assert result.total_jump == 0.0

    def test_zero_field_constant_curve(self):
        V = family("zero")
        mu0 = DiscreteMeasure([[0.2, 0.1]], [1.0])
        grid = np.linspace(0, 1, 17)
        result = build_viable_curve(V, BALL, 0.0, mu0, 2, grid, tol=1e-6, seed=1)
        assert result.success
        assert np.allclose(result.curve.final.points, mu0.points)

    def test_growing_tube_boundary_start(self):
        tube = ball_tube([0.0, 0.0], 1.0, 1.0, 2.0, t_span=(0.0, 1.0))
        V = family("zero")
        mu0 = DiscreteMeasure.dirac([1.0, 0.0])
        grid = np.linspace(0, 1, 17)
        result = build_viable_curve(V, tube, 0.0, mu0, 2, grid, tol=1e-6, seed=1)
        assert result.success
        assert max(result.trace.g_values) == 0.0

    def test_initial_violation_rejected(self):
        V = family("zero")
        mu0 = DiscreteMeasure.dirac([2.0, 0.0])
        with pytest.raises(ValueError, match="initial"):
            build_viable_curve(V, BALL, 0.0, mu0, 2, np.linspace(0, 1, 17), tol=1e-6)

    def test_infeasible_scenario_reports_structured_failure(self):
        # pure outward flow cannot stay in the ball: jumps accumulate and
        # the builder must say so instead of silently succeeding
        V = family("outward2")
        mu0 = DiscreteMeasure.dirac([0.9, 0.0])
        grid = np.linspace(0, 1, 33)
        result = build_viable_curve(V, BALL, 0.0, mu0, 3, grid, tol=1e-6, seed=1)
        assert not result.success
        assert result.total_jump > 1e-3
        assert max(result.trace.g_values) > 1e-6

    def test_dyadic_nodes_must_lie_on_grid(self):
        V = family("zero")
        mu0 = DiscreteMeasure.dirac([0.0, 0.0])
        with pytest.raises(ValueError, match="dyadic"):
            build_viable_curve(V, BALL, 0.0, mu0, 3, np.linspace(0, 1, 4), tol=1e-6)


class TestEmpiricalInvariance:
    def test_contraction_passes(self):
        V = family("inward")
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        report = check_empirical_invariance(
            V, BALL, 0.0, mu0, 50, np.linspace(0, 1, 33), seed=2, tol=1e-6
        )
        assert report["passed"]

    def test_outward_selection_escapes(self):
        V = family("outward2", "inward")
        mu0 = DiscreteMeasure.dirac([0.9, 0.0])
        report = check_empirical_invariance(
            V, BALL, 0.0, mu0, 50, np.linspace(0, 1, 33), seed=2, tol=1e-6
        )
        assert not report["passed"]
        assert report["worst"] > 0.1

    def test_zero_family_trivially_passes(self):
        V = family("zero")
        mu0 = DiscreteMeasure.dirac([1.0, 0.0])
        report = check_empirical_invariance(
            V, BALL, 0.0, mu0, 10, np.linspace(0, 1, 9), seed=2, tol=1e-12
        )
        assert report["passed"] and report["worst"] == 0.0


class TestCouplings:
    def test_viability_soundness(self):
        # condition satisfied on ball samples ==> constructive curve succeeds
        V = family("inward")
        report = check_viability_condition(V, BALL, chebyshev_times(0, 1, 8), ball_samples)
        assert report.verdict == "satisfied"
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        result = build_viable_curve(V, BALL, 0.0, mu0, 4, np.linspace(0, 1, 65),
                                    tol=1e-6, seed=3)
        assert result.success and result.total_jump == 0.0

    def test_invariance_coupling(self):
        V = family("inward")
        cond = check_invariance_condition(V, BALL, chebyshev_times(0, 1, 8), ball_samples)
        assert cond.verdict == "satisfied"
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        emp = check_empirical_invariance(V, BALL, 0.0, mu0, 50,
                                         np.linspace(0, 1, 33), seed=4, tol=1e-6)
        assert emp["passed"]

    def test_contrapositive(self):
        # empirical failure ==> the condition checker must not certify
        V = family("outward2", "inward")
        mu0 = DiscreteMeasure.dirac([0.9, 0.0])
        emp = check_empirical_invariance(V, BALL, 0.0, mu0, 20,
                                         np.linspace(0, 1, 33), seed=5, tol=1e-6)
        assert not emp["passed"]
        cond = check_invariance_condition(V, BALL, chebyshev_times(0, 1, 4), ball_samples)
        assert cond.verdict != "satisfied"


class TestGronwallMonitor:
    def test_zero_trace_passes(self):
        trace = DistanceTrace(np.linspace(0, 1, 5), np.zeros(5), np.zeros(5))
        assert gronwall_monitor(trace, 1.0, 0.5)["passed"]

    def test_constant_trace_with_zero_moduli(self):
        trace = DistanceTrace(np.linspace(0, 1, 5), np.full(5, 0.7), np.full(5, 0.7))
        assert gronwall_monitor(trace, 0.0, 0.0)["passed"]

    def test_growth_beyond_envelope_flagged(self):
        times = np.linspace(0, 1, 3)
        g = np.array([0.1, 0.1, 1.0])  # jumps far above exp(0.1 * 1) growth
        trace = DistanceTrace(times, g, g)
        report = gronwall_monitor(trace, 0.1, 0.0)
        assert not report["passed"]
        assert report["worst_pair"] is not None

    def test_tracked_interaction_system_within_envelope(self):
        # measure-coupled family (L > 0): distance between a tracked curve
        # and its reference obeys the exponential envelope
        coef = 0.8
        gens = [
            lambda t, mu: interaction_drift(mu, coef),
            lambda t, mu: constant_field([0.3]),
        ]
        V = SetValuedField(gens, m_bound=1.0, l_bound=coef, L_bound=coef)
        mu0 = DiscreteMeasure([[0.5], [-0.5]], [0.5, 0.5])
        nu0 = DiscreteMeasure([[0.8], [-0.2]], [0.5, 0.5])
        grid = np.linspace(0, 1, 33)
        sel = Selection.constant(grid, [0.5, 0.5])
        ref = solve_inclusion(V, sel, 0.0, nu0, grid)

        def drive(t, x):
            idx = min(max(int(np.searchsorted(grid, t, "right")) - 1, 0), len(grid) - 2)
            return V.field_for_weights(grid[idx], ref.states[idx], [0.5, 0.5])(t, x)

        from wassdyn.dynamics import VelocityField

        tracked, trace = filippov_track(V, ref, 0.0, mu0, grid, R=4.0,
                                        ref_field=VelocityField(drive))
        dtrace = DistanceTrace(trace["times"], trace["wp"], trace["wp"])
        report = gronwall_monitor(dtrace, V.l_bound, V.L_bound, slack_rel=0.05)
        assert report["passed"]


class TestNecessaryConditionProbe:
    def test_static_zero_field_member_everywhere(self):
        V = family("zero")
        mu0 = DiscreteMeasure.dirac([0.2, 0.0])
        grid = np.linspace(0, 1, 17)
        result = build_viable_curve(V, BALL, 0.0, mu0, 2, grid, tol=1e-6, seed=6)
        probes = necessary_condition_probe(V, BALL, result.curve,
                                           sample_times=result.trace.times[:-1])
        assert all(p["any_member"] for p in probes)

    def test_inward_ball_member_everywhere(self):
        V = family("inward")
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        grid = np.linspace(0, 1, 17)
        result = build_viable_curve(V, BALL, 0.0, mu0, 2, grid, tol=1e-6, seed=6)
        probes = necessary_condition_probe(V, BALL, result.curve,
                                           sample_times=result.trace.times[:-1])
        assert all(p["any_member"] for p in probes)

    def test_projection_forced_curve_flags_failures(self):
        V = family("outward2")
        mu0 = DiscreteMeasure.dirac([0.95, 0.0])
        grid = np.linspace(0, 1, 33)
        result = build_viable_curve(V, BALL, 0.0, mu0, 3, grid, tol=1e-6, seed=6)
        assert not result.success
        probes = necessary_condition_probe(V, BALL, result.curve,
                                           sample_times=result.trace.times[:-1])
        flagged = [p for p in probes if p["outside"] or not p["any_member"]]
        assert flagged


class TestDistanceTraceRegularity:
    def test_ac_modulus_of_tube_distance(self):
        # |g(t2) - g(t1)| <= int (curve modulus + tube modulus), with the
        # curve modulus (1 + C) m(t) from the a priori estimates
        rate = -0.4
        tube = ball_tube([0.0], 1.0, rate, 2.0, t_span=(0.0, 1.0))
        gens = [lambda t, mu: constant_field([0.6]), lambda t, mu: constant_field([-0.2])]
        V = SetValuedField(gens, m_bound=0.6, l_bound=0.0, L_bound=0.0)
        mu0 = DiscreteMeasure([[0.3], [-0.1]], [0.5, 0.5])
        grid = np.linspace(0, 1, 33)
        sel = Selection.constant(grid, [0.7, 0.3])
        curve = solve_inclusion(V, sel, 0.0, mu0, grid)
        g = np.array([tube.at(t).distance(mu) for t, mu in zip(curve.times, curve.states)])
        c_ac = ac_envelope_constant(moment_p(mu0, 2.0), V.m_bound, 0.0, 1.0)
        for i in range(0, len(grid), 4):
            for j in range(i + 1, len(grid), 4):
                budget = (1.0 + c_ac) * V.m_bound.integral(grid[i], grid[j]) \
                    + tube.modulus.integral(grid[i], grid[j])
                assert abs(g[j] - g[i]) <= budget * 1.05 + 1e-9


class TestInfinitesimalDiagnostics:
    def test_initial_velocity_quotients_small(self):
        V = family("inward", "zero")
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        for gidx in range(2):
            weights = np.eye(2)[gidx]
            table = initial_velocity_diagnostic(
                V, 0.0, mu0, weights, [1e-3, 3e-3, 1e-2], R=3.0, substep=1e-3
            )
            for h, q in table:
                assert q <= 1e-2, (gidx, h, q)

    def test_reachable_velocity_search_finds_driver(self):
        V = family("inward", "zero")
        mu0 = DiscreteMeasure([[0.5, 0.0], [0.0, 0.3]], [0.5, 0.5])
        grid = np.linspace(0.0, 1.0, 501)  # node spacing 2e-3
        for seed in (1, 2, 3):
            from wassdyn.dynamics import random_selection
            from wassdyn.rng import SplitMix64

            sel = random_selection(V, np.array([0.0, 0.02, 1.0]), SplitMix64(seed))
            sel = Selection(grid, np.array([sel.weights_at(t) for t in grid[:-1]]))
            curve = solve_inclusion(V, sel, 0.0, mu0, grid)
            out = reachable_velocity_search(V, curve, 0.0, [2e-3, 4e-3, 8e-3])
            assert out["quotient"] <= 1e-2
            # the recovered weights approximate the driving ones
            assert np.allclose(out["weights"], sel.weights_at(0.0), atol=0.05)
