import numpy as np
import pytest

from wassdyn.cones import (
    TangentDirection,
    adjacent_membership_support,
    contingent_quotient,
    epigraph_cone_test,
    graph_contingent_quotient,
    lower_dir_derivative,
)
from wassdyn.constraints import (
    Ball,
    Polytope,
    SupportConstraint,
    ball_tube,
    second_moment_functional,
    static_tube,
)
from wassdyn.measure import DiscreteMeasure, SampledMap


def unit_ball_constraint(d=2, p=2.0):
    return SupportConstraint(Ball([0.0] * d, 1.0), p)


def boundary_atom(d=2):
    x = np.zeros(d)
    x[0] = 1.0
    return DiscreteMeasure.dirac(x)


class TestContingentQuotient:
    def test_interior_point_member(self):
        Q = unit_ball_constraint()
        mu = DiscreteMeasure.dirac([0.1, 0.0])
        xi = SampledMap(mu, [[5.0, -3.0]])
        rep = contingent_quotient(mu, xi, Q)
        assert rep.verdict == "member"
        assert rep.min_quotient == 0.0

    def test_outward_non_member_quotient_one(self):
        # dist((1+h, 0); K) = h, quotient exactly 1
        Q = unit_ball_constraint()
        mu = boundary_atom()
        xi = SampledMap(mu, [[1.0, 0.0]])
        rep = contingent_quotient(mu, xi, Q)
        assert rep.verdict == "non-member"
        assert rep.quotients[-1][1] == pytest.approx(1.0, abs=1e-9)

    def test_tangential_member_quotient_decays(self):
        # dist = sqrt(1 + h^2) - 1 ~ h^2 / 2, quotient -> 0
        Q = unit_ball_constraint()
        mu = boundary_atom()
        xi = SampledMap(mu, [[0.0, 1.0]])
        rep = contingent_quotient(mu, xi, Q)
        assert rep.verdict == "member"
        h, q = rep.quotients[3]
        assert q == pytest.approx((np.sqrt(1 + h * h) - 1.0) / h, abs=1e-12)

    def test_base_outside_rejected(self):
        Q = unit_ball_constraint()
        mu = DiscreteMeasure.dirac([2.0, 0.0])
        with pytest.raises(ValueError):
            contingent_quotient(mu, SampledMap.zero(mu), Q)

    def test_report_invariant(self):
        Q = unit_ball_constraint()
        mu = boundary_atom()
        rep = contingent_quotient(mu, SampledMap(mu, [[0.0, 1.0]]), Q)
        if rep.verdict == "member":
            assert rep.min_quotient <= rep.tol


class TestAdjacentSupport:
    def test_interior_atoms_always_pass(self):
        mu = DiscreteMeasure([[0.0, 0.0], [0.3, 0.2]], [0.5, 0.5])
        xi = SampledMap(mu, [[9.0, 9.0], [-9.0, 9.0]])
        ok, per_atom = adjacent_membership_support(mu, xi, Ball([0.0, 0.0], 1.0))
        assert ok and all(per_atom)

    def test_inward_on_boundary(self):
        mu = boundary_atom()
        ok, _ = adjacent_membership_support(mu, SampledMap(mu, [[-1.0, 0.0]]), Ball([0.0, 0.0], 1.0))
        assert ok

    def test_outward_on_boundary_fails(self):
        mu = boundary_atom()
        ok, per_atom = adjacent_membership_support(mu, SampledMap(mu, [[1.0, 0.0]]), Ball([0.0, 0.0], 1.0))
        assert not ok and per_atom == [False]

    def test_polytope_active_halfspace(self):
        box = Polytope(np.vstack([np.eye(2), -np.eye(2)]), np.ones(4))
        mu = DiscreteMeasure.dirac([1.0, 0.0])
        ok, _ = adjacent_membership_support(mu, SampledMap(mu, [[0.0, 1.0]]), box)
        assert ok
        ok, _ = adjacent_membership_support(mu, SampledMap(mu, [[0.5, 0.0]]), box)
        assert not ok

    def test_atom_outside_region_rejected(self):
        mu = DiscreteMeasure.dirac([3.0, 0.0])
        with pytest.raises(ValueError, match="outside"):
            adjacent_membership_support(mu, SampledMap.zero(mu), Ball([0.0, 0.0], 1.0))

    def test_adjacent_implies_contingent(self, np_rng):
        # flat-cone inclusion probed on random boundary/interior instances
        Q = unit_ball_constraint()
        K = Q.region
        for _ in range(100):
            n = int(np_rng.integers(1, 4))
            dirs = np_rng.normal(size=(n, 2))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            radii = np.where(np_rng.random(n) < 0.5, 1.0, np_rng.uniform(0.1, 0.9, size=n))
            pts = dirs * radii[:, None]
            w = np_rng.random(n) + 0.05
            mu = DiscreteMeasure(pts, w / w.sum())
            vals = np_rng.normal(size=(n, 2))
            # force adjacency: remove outward radial component of boundary atoms
            for i in np.where(radii >= 1.0)[0]:
                r = float(np.dot(vals[i], dirs[i]))
                if r > 0:
                    vals[i] -= r * dirs[i]
            xi = SampledMap(mu, vals)
            ok, _ = adjacent_membership_support(mu, xi, K)
            assert ok
            rep = contingent_quotient(mu, xi, Q)
            assert rep.verdict == "member"


class TestGraphCone:
    def test_static_tube_reduces_to_stationary(self):
        Q = unit_ball_constraint()
        tube = static_tube(Q, (0.0, 1.0))
        mu = DiscreteMeasure.dirac([0.2, 0.0])
        xi = SampledMap(mu, [[1.0, 0.0]])
        rep = graph_contingent_quotient(0.0, mu, TangentDirection(1.0, xi), tube)
        assert rep.verdict == "member"

    def test_growing_tube_static_direction_member(self):
        tube = ball_tube([0.0], 1.0, 1.0, 2.0, t_span=(0.0, 1.0))
        mu = DiscreteMeasure.dirac([1.0])
        rep = graph_contingent_quotient(0.0, mu, TangentDirection(1.0, SampledMap.zero(mu)), tube)
        assert rep.verdict == "member"
        assert rep.min_quotient == 0.0

    def test_shrinking_tube_static_direction_non_member(self):
        tube = ball_tube([0.0], 1.0, -1.0, 2.0, t_span=(0.0, 0.9))
        mu = DiscreteMeasure.dirac([1.0])
        rep = graph_contingent_quotient(0.0, mu, TangentDirection(1.0, SampledMap.zero(mu)), tube)
        assert rep.verdict == "non-member"
        # quotient approaches the shrink rate
        assert rep.quotients[-1][1] == pytest.approx(1.0, rel=1e-3)

    def test_shrinking_tube_fast_inward_member(self):
        tube = ball_tube([0.0], 1.0, -1.0, 2.0, t_span=(0.0, 0.9))
        mu = DiscreteMeasure.dirac([1.0])
        xi = SampledMap(mu, [[-1.0]])  # retreats exactly with the boundary
        rep = graph_contingent_quotient(0.0, mu, TangentDirection(1.0, xi), tube)
        assert rep.verdict == "member"

    def test_base_outside_tube_rejected(self):
        tube = ball_tube([0.0], 1.0, -1.0, 2.0, t_span=(0.0, 0.9))
        mu = DiscreteMeasure.dirac([1.5])
        with pytest.raises(ValueError):
            graph_contingent_quotient(0.0, mu, TangentDirection(1.0, SampledMap.zero(mu)), tube)


class TestLowerDirDerivative:
    def test_matches_analytic_derivative(self):
        # W = int |x|^2: directional derivative 2 int <x, xi> = 2 at delta_1, xi = 1
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([1.0])
        xi = SampledMap(mu, [[1.0]])
        val = lower_dir_derivative(W, mu, xi)
        assert val == pytest.approx(2.0, abs=2e-5)

    def test_zero_direction(self):
        W = second_moment_functional()
        mu = DiscreteMeasure([[1.0], [2.0]], [0.5, 0.5])
        assert lower_dir_derivative(W, mu, SampledMap.zero(mu)) == 0.0

    def test_no_linear_term_at_origin(self):
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([0.0])
        xi = SampledMap(mu, [[3.0]])
        val = lower_dir_derivative(W, mu, xi)
        assert 0.0 <= val <= 9.0 * 2.0**-16 + 1e-12


class TestEpigraphConeTest:
    def test_interior_always_member(self):
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([1.0])
        xi = SampledMap(mu, [[100.0]])
        assert epigraph_cone_test(mu, W(mu) + 5.0, xi, -100.0, W)

    def test_boundary_with_slack(self):
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([1.0])
        xi = SampledMap(mu, [[1.0]])
        d = lower_dir_derivative(W, mu, xi)
        assert epigraph_cone_test(mu, W(mu), xi, d + 1.0, W)

    def test_boundary_without_slack(self):
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([1.0])
        xi = SampledMap(mu, [[1.0]])
        d = lower_dir_derivative(W, mu, xi)
        assert not epigraph_cone_test(mu, W(mu), xi, d - 1.0, W)

    def test_below_epigraph_rejected(self):
        W = second_moment_functional()
        mu = DiscreteMeasure.dirac([1.0])
        with pytest.raises(ValueError):
            epigraph_cone_test(mu, 0.0, SampledMap.zero(mu), 0.0, W)


class TestConeHomogeneity:
    def test_verdicts_scale_invariant(self, np_rng):
        # cones are cones: scaling a decided direction keeps the verdict
        Q = unit_ball_constraint()
        tube = ball_tube([0.0, 0.0], 1.0, -0.5, 2.0, t_span=(0.0, 1.0))
        for family in ("support", "graph"):
            checked = 0
            trial = 0
            while checked < 50 and trial < 400:
                trial += 1
                theta = np_rng.uniform(0, 2 * np.pi)
                x = np.array([np.cos(theta), np.sin(theta)])
                if np_rng.random() < 0.4:
                    x = x * np_rng.uniform(0.2, 0.8)
                mu = DiscreteMeasure.dirac(x)
                vals = np_rng.normal(size=(1, 2))
                xi = SampledMap(mu, vals)
                if family == "support":
                    base = contingent_quotient(mu, xi, Q).verdict
                else:
                    base = graph_contingent_quotient(
                        0.0, mu, TangentDirection(1.0, xi), tube
                    ).verdict
                if base == "inconclusive":
                    continue
                checked += 1
                for lam in (0.5, 2.0):
                    scaled = SampledMap(mu, lam * vals)
                    if family == "support":
                        v = contingent_quotient(mu, scaled, Q).verdict
                    else:
                        v = graph_contingent_quotient(
                            0.0, mu, TangentDirection(lam * 1.0, scaled), tube
                        ).verdict
                    assert v == base
            assert checked == 50

    def test_single_atom_verdicts_match_closed_form_cone(self, np_rng):
        # for the unit ball and diracs, contingent membership must agree
        # exactly with the pointwise tangent cone of K
        Q = unit_ball_constraint()
        for _ in range(100):
            theta = np_rng.uniform(0, 2 * np.pi)
            boundary = np_rng.random() < 0.6
            r = 1.0 if boundary else float(np_rng.uniform(0.1, 0.9))
            x = r * np.array([np.cos(theta), np.sin(theta)])
            mu = DiscreteMeasure.dirac(x)
            v = np_rng.normal(size=2)
            xi = SampledMap(mu, v[None, :])
            in_cone = (not boundary) or float(np.dot(v, x)) <= 0.0
            rep = contingent_quotient(mu, xi, Q)
            if in_cone:
                assert rep.verdict == "member"
            else:
                assert rep.verdict in ("non-member", "inconclusive")
                assert rep.verdict != "member"
