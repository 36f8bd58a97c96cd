"""Service-planning tests: capacity chain recompute, clustering, serve times."""

import math

import numpy as np
import pytest

from uavnet.channel import draw_fading, path_loss
from uavnet.clustering import (
    ClusterPlan,
    InfeasibilityError,
    estimate_capacity,
    kmeans_clusters,
    nearest_cluster,
    plan_serve_times,
    plan_to_dict,
    reference_distance,
    serving_time,
)


def blob_points(rng):
    centers = np.array([[5.0, 5.0], [55.0, 5.0], [30.0, 55.0]])
    pts = np.vstack([c + rng.normal(scale=1.0, size=(4, 2)) for c in centers])
    return pts, centers


class TestCapacity:
    def test_reference_distance_formula(self, small_cfg):
        expected = math.hypot(math.hypot(60.0, 60.0) / 2.0, 20.0)
        assert reference_distance(small_cfg) == pytest.approx(expected, rel=1e-14)

    def test_chain_recompute(self, small_cfg):
        est = estimate_capacity(small_cfg, 512, np.random.default_rng(123))
        d_ref = reference_distance(small_cfg)
        pl = float(path_loss(d_ref, small_cfg.carrier_freq, small_cfg.eta_los))
        sigma2 = small_cfg.b_total_max * small_cfg.noise_psd
        h = draw_fading(np.random.default_rng(123), small_cfg.antennas, size=512)
        h2 = np.sum(np.abs(h) ** 2, axis=-1)
        lam = float(np.mean(np.log2(
            1.0 + (small_cfg.p_total_max / (small_cfg.carrier_freq * sigma2))
            * (h2 ** 2 / pl)
        )))
        assert est.lambda_se == pytest.approx(lam, rel=1e-14)
        assert est.r_max == pytest.approx(small_cfg.b_total_max * lam, rel=1e-14)
        # overrides in the fixture pin tau and c_max
        assert est.tau == small_cfg.tau_slots
        assert est.c_max == small_cfg.c_max_users
        assert est.n_clusters == math.ceil(small_cfg.n_users / est.c_max)

    def test_derived_tau_and_c_max(self, make_cfg):
        cfg = make_cfg(tau_slots=None, c_max_users=None, qos_bits=1e5)
        est = estimate_capacity(cfg, 256, np.random.default_rng(7))
        tau = max(1, math.ceil(cfg.qos_bits / (est.r_max * cfg.slot_duration)))
        assert est.tau == tau
        assert est.c_max == max(
            1, math.floor(tau * est.r_max * cfg.slot_duration / cfg.qos_bits)
        )

    def test_zero_demand_collapses_chain(self, make_cfg):
        cfg = make_cfg(tau_slots=None, c_max_users=None, qos_bits=0.0)
        est = estimate_capacity(cfg, 64, np.random.default_rng(1))
        assert est.tau == 1
        assert est.c_max == cfg.n_users
        assert est.n_clusters == 1

    def test_unreachable_demand_raises(self, make_cfg):
        cfg = make_cfg(tau_slots=None, c_max_users=None, qos_bits=1e30)
        with pytest.raises(InfeasibilityError):
            estimate_capacity(cfg, 64, np.random.default_rng(1))

    def test_rejects_empty_sample(self, small_cfg):
        with pytest.raises(ValueError):
            estimate_capacity(small_cfg, 0, np.random.default_rng(0))


class TestKmeans:
    def test_separated_blobs_recovered(self):
        pts, centers = blob_points(np.random.default_rng(2))
        plan = kmeans_clusters(pts, 3, np.random.default_rng(3))
        assert plan.n_clusters == 3
        # groups match the generating blobs (labels follow first-member order)
        for blob in range(3):
            labels = plan.assignments[blob * 4:(blob + 1) * 4]
            assert len(set(labels.tolist())) == 1
            np.testing.assert_allclose(
                plan.centroids[labels[0]], pts[blob * 4:(blob + 1) * 4].mean(axis=0)
            )
        assert plan.assignments[0] == 0
        first_seen = [int(plan.assignments[np.argmax(plan.assignments == l)])
                      for l in range(3)]
        assert first_seen == [0, 1, 2]

    def test_deterministic_under_seed(self):
        pts = np.random.default_rng(4).uniform(0, 60, size=(15, 2))
        a = kmeans_clusters(pts, 4, np.random.default_rng(99), tau=3, c_max=2)
        b = kmeans_clusters(pts, 4, np.random.default_rng(99), tau=3, c_max=2)
        assert np.array_equal(a.assignments, b.assignments)
        assert np.array_equal(a.centroids, b.centroids)
        assert a.tau == 3 and a.c_max == 2

    def test_every_cluster_nonempty(self):
        pts = np.random.default_rng(5).uniform(0, 60, size=(9, 2))
        plan = kmeans_clusters(pts, 4, np.random.default_rng(6))
        assert set(plan.assignments.tolist()) == {0, 1, 2, 3}

    def test_rejects_more_clusters_than_users(self):
        with pytest.raises(ValueError):
            kmeans_clusters(np.zeros((2, 2)), 3, np.random.default_rng(0))


def toy_plan():
    assignments = np.array([0, 0, 0, 0, 0, 1, 1])
    centroids = np.array([[30.0, 70.0], [0.0, 10.0]])
    return ClusterPlan(assignments=assignments, centroids=centroids,
                       serve_times=[None, None], tau=3, c_max=2)


class TestNearest:
    def test_picks_closest_unserved(self):
        plan = toy_plan()
        assert nearest_cluster(np.array([0.0, 0.0, 50.0]), plan, set()) == 1
        assert nearest_cluster(np.array([0.0, 0.0, 50.0]), plan, {1}) == 0

    def test_tie_breaks_to_lowest_index(self):
        plan = ClusterPlan(
            assignments=np.array([0, 1]),
            centroids=np.array([[10.0, 0.0], [-10.0, 0.0]]),
            serve_times=[None, None],
        )
        assert nearest_cluster(np.array([0.0, 0.0, 30.0]), plan, set()) == 0

    def test_all_served_raises(self):
        with pytest.raises(ValueError):
            nearest_cluster(np.array([0.0, 0.0, 50.0]), toy_plan(), {0, 1})


class TestServingTime:
    def test_rounds_plus_travel(self, small_cfg):
        plan = toy_plan()
        pose = np.array([0.0, 0.0, 50.0])
        travel = math.ceil(math.hypot(30.0, 70.0) / small_cfg.s_xy_max)
        assert serving_time(plan, pose, small_cfg, 0) == math.ceil(5 / 2) * 3 + travel
        travel1 = math.ceil(10.0 / small_cfg.s_xy_max)
        assert serving_time(plan, pose, small_cfg, 1) == math.ceil(2 / 2) * 3 + travel1

    def test_capacity_override_serializes_users(self, small_cfg):
        plan = toy_plan()
        pose = np.array([30.0, 70.0, 50.0])  # already on station: no travel
        assert serving_time(plan, pose, small_cfg, 0, c_max_override=1) == 5 * 3

    def test_missing_capacity_context_raises(self, small_cfg):
        plan = toy_plan()
        plan.tau = None
        with pytest.raises(ValueError):
            serving_time(plan, np.zeros(3), small_cfg, 0)


class TestPlanServeTimes:
    def test_within_budget_unchanged(self, small_cfg):
        plan = toy_plan()
        pose = np.array([0.0, 0.0, 50.0])
        raw = [serving_time(plan, pose, small_cfg, l) for l in range(2)]
        times = plan_serve_times(plan, pose, small_cfg, budget_slots=sum(raw))
        assert times == raw
        assert plan.serve_times == raw

    def test_floor_rescale(self, small_cfg):
        plan = toy_plan()
        pose = np.array([0.0, 0.0, 50.0])
        raw = [serving_time(plan, pose, small_cfg, l) for l in range(2)]
        budget = sum(raw) - 2
        times = plan_serve_times(plan, pose, small_cfg, budget)
        factor = budget / sum(raw)
        assert times == [math.floor(t * factor) for t in raw]
        assert sum(times) <= budget

    def test_rescale_below_tau_raises(self, small_cfg):
        plan = toy_plan()
        with pytest.raises(InfeasibilityError):
            plan_serve_times(plan, np.array([0.0, 0.0, 50.0]), small_cfg,
                             budget_slots=plan.tau * 2 - 1)


def test_plan_to_dict_roundtrips_fields():
    plan = toy_plan()
    plan.order = [1, 0]
    plan.serve_times = [12, 4]
    d = plan_to_dict(plan)
    assert d["assignments"] == [0, 0, 0, 0, 0, 1, 1]
    assert d["serve_times"] == [12, 4]
    assert d["order"] == [1, 0]
    assert d["tau"] == 3 and d["c_max"] == 2
    assert d["centroids"] == [[30.0, 70.0], [0.0, 10.0]]
