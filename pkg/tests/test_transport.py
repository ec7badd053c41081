import numpy as np
import pytest

from conftest import brute_force_wp_uniform, random_measure
from wassdyn.measure import DiscreteMeasure, SampledMap, pushforward
from wassdyn.transport import (
    MeasureCloud,
    TransportPlan,
    coupling_from_maps,
    delta_local,
    dist_to_cloud,
    hausdorff,
    plan_to_json,
    wasserstein,
    wasserstein_distance,
)


class TestWasserstein:
    def test_two_diracs(self):
        d, plan = wasserstein(DiscreteMeasure.dirac([1.0, 2.0]),
                              DiscreteMeasure.dirac([4.0, 6.0]), 3.0)
        assert d == pytest.approx(5.0)
        assert plan.matrix.shape == (1, 1) and plan.matrix[0, 0] == 1.0

    def test_identical_measures(self):
        mu = DiscreteMeasure([[0.0], [1.0], [3.0]], [0.2, 0.3, 0.5])
        d, _ = wasserstein(mu, mu, 1.5)
        assert d <= 1e-12

    def test_two_atom_shift(self):
        # brute force over the two vertex assignments:
        #   identity: (0.5*0 + 0.5*1)^(1/2) = sqrt(1/2)
        #   swap:     (0.5*1 + 0.5*4)^(1/2) = sqrt(5/2)
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        nu = DiscreteMeasure([[0.0], [2.0]], [0.5, 0.5])
        d, _ = wasserstein(mu, nu, 2.0)
        assert d == pytest.approx(np.sqrt(0.5), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            wasserstein(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.0, 1.0]), 2.0)

    def test_p_out_of_range(self):
        mu = DiscreteMeasure.dirac([0.0])
        with pytest.raises(ValueError):
            wasserstein(mu, mu, 1.0)

    def test_matches_permutation_brute_force(self, np_rng):
        for _ in range(60):
            n = int(np_rng.integers(2, 7))
            d = int(np_rng.integers(1, 4))
            p = float(np_rng.choice([1.5, 2.0, 3.0]))
            mu = random_measure(np_rng, n, d, uniform=True)
            nu = random_measure(np_rng, n, d, uniform=True)
            expected = brute_force_wp_uniform(mu, nu, p)
            assert wasserstein(mu, nu, p)[0] == pytest.approx(expected, abs=1e-9)
            assert wasserstein(mu, nu, p, force_lp=True)[0] == pytest.approx(expected, abs=1e-9)

    def test_unequal_weights_lp(self):
        # splitting mass: delta_0 vs 0.5 delta_-1 + 0.5 delta_1, p = 2
        # plan is forced, cost = (0.5 + 0.5)^(1/2) = 1
        mu = DiscreteMeasure.dirac([0.0])
        nu = DiscreteMeasure([[-1.0], [1.0]], [0.5, 0.5])
        d, plan = wasserstein(mu, nu, 2.0)
        assert d == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(plan.matrix, [[0.5, 0.5]])

    def test_triangle_inequality(self, np_rng):
        for _ in range(200):
            d = int(np_rng.integers(1, 4))
            p = float(np_rng.choice([1.5, 2.0, 3.0]))
            mu = random_measure(np_rng, int(np_rng.integers(1, 6)), d)
            nu = random_measure(np_rng, int(np_rng.integers(1, 6)), d)
            rho = random_measure(np_rng, int(np_rng.integers(1, 6)), d)
            assert (
                wasserstein_distance(mu, rho, p)
                <= wasserstein_distance(mu, nu, p) + wasserstein_distance(nu, rho, p) + 1e-9
            )

    def test_plan_marginals(self, np_rng):
        for _ in range(40):
            mu = random_measure(np_rng, int(np_rng.integers(1, 7)), 2)
            nu = random_measure(np_rng, int(np_rng.integers(1, 7)), 2)
            _, plan = wasserstein(mu, nu, 2.0)
            assert np.abs(plan.matrix.sum(axis=1) - mu.weights).max() <= 1e-10
            assert np.abs(plan.matrix.sum(axis=0) - nu.weights).max() <= 1e-10


class TestPlanValidation:
    def test_rejects_bad_marginals(self):
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        with pytest.raises(ValueError):
            TransportPlan(mu, mu, [[0.5, 0.0], [0.25, 0.25]])

    def test_json_round_trip(self):
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        _, plan = wasserstein(mu, mu, 2.0)
        text = plan_to_json(plan)
        import json

        again = TransportPlan.from_json_obj(json.loads(text), mu, mu)
        assert np.allclose(again.matrix, plan.matrix)


class TestCouplingFromMaps:
    def test_equal_maps_zero_cost(self):
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        z = SampledMap(mu, [[1.0], [2.0]])
        _, cost = coupling_from_maps(mu, z, z, 2.0)
        assert cost == 0.0

    def test_single_atom(self):
        mu = DiscreteMeasure.dirac([0.0])
        z = SampledMap(mu, [[0.0]])
        x = SampledMap(mu, [[3.0]])
        plan, cost = coupling_from_maps(mu, z, x, 2.0)
        assert cost == pytest.approx(3.0)
        assert plan.matrix[0, 0] == 1.0

    def test_shift_cost_one(self):
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        z = SampledMap(mu, mu.points)
        x = SampledMap(mu, mu.points + 1.0)
        _, cost = coupling_from_maps(mu, z, x, 2.0)
        assert cost == pytest.approx(1.0)

    def test_certifies_upper_bound(self, np_rng):
        for _ in range(200):
            n = int(np_rng.integers(1, 7))
            d = int(np_rng.integers(1, 4))
            p = float(np_rng.choice([1.5, 2.0, 3.0]))
            mu = random_measure(np_rng, n, d)
            z = SampledMap(mu, np_rng.normal(size=(n, d)))
            x = SampledMap(mu, np_rng.normal(size=(n, d)))
            _, cost = coupling_from_maps(mu, z, x, p)
            w = wasserstein_distance(pushforward(mu, z), pushforward(mu, x), p)
            assert w <= cost + 1e-9


class TestCloudDistances:
    def test_dist_to_self(self):
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        d, idx = dist_to_cloud(mu, MeasureCloud([mu]), 2.0)
        assert d <= 1e-12 and idx == 0

    def test_nearest_member(self):
        d, idx = dist_to_cloud(
            DiscreteMeasure.dirac([0.0]),
            MeasureCloud([DiscreteMeasure.dirac([1.0]), DiscreteMeasure.dirac([3.0])]),
            2.0,
        )
        assert d == pytest.approx(1.0) and idx == 0

    def test_tie_breaks_to_lowest_index(self):
        # both members sit sqrt(1/2) away, computed by the two-assignment
        # enumeration above; the tie must resolve to index 0
        mu = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        cloud = MeasureCloud([DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([1.0])])
        d, idx = dist_to_cloud(mu, cloud, 2.0)
        assert d == pytest.approx(np.sqrt(0.5), abs=1e-12)
        assert idx == 0

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            MeasureCloud([])

    def test_hausdorff_identical(self):
        a = MeasureCloud([DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([2.0])])
        assert hausdorff(a, a, 2.0) <= 1e-12

    def test_hausdorff_singletons(self):
        a = MeasureCloud([DiscreteMeasure.dirac([0.0])])
        b = MeasureCloud([DiscreteMeasure.dirac([1.0])])
        assert hausdorff(a, b, 2.0) == pytest.approx(1.0)

    def test_hausdorff_asymmetric_pair(self):
        # enumerate pairs: sup over A of dist to B is 2, other side 0
        a = MeasureCloud([DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([2.0])])
        b = MeasureCloud([DiscreteMeasure.dirac([0.0])])
        assert hausdorff(a, b, 2.0) == pytest.approx(2.0)

    def test_delta_local_same_cloud(self):
        a = MeasureCloud([DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([2.0])])
        assert delta_local(a, a, DiscreteMeasure.dirac([0.0]), 1.0, 2.0) == 0.0

    def test_delta_local_empty_restriction(self):
        a = MeasureCloud([DiscreteMeasure.dirac([5.0])])
        b = MeasureCloud([DiscreteMeasure.dirac([0.0])])
        assert delta_local(a, b, DiscreteMeasure.dirac([0.0]), 1.0, 2.0) == 0.0

    def test_delta_local_within_ball(self):
        a = MeasureCloud([DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.5])])
        b = MeasureCloud([DiscreteMeasure.dirac([0.0])])
        out = delta_local(a, b, DiscreteMeasure.dirac([0.0]), 0.6, 2.0)
        assert out == pytest.approx(0.5)
