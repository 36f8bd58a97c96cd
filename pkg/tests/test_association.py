"""Association solver tests against an exhaustive enumeration oracle."""

import csv
from pathlib import Path

import numpy as np
import pytest

from uavnet.association import (
    AssociationMatrix,
    association_to_csv,
    solve_association,
)
from uavnet.clustering import InfeasibilityError

DATA = Path(__file__).parent / "data"

# rates saved from fuzzing campaigns that stressed both solver engines
HARD_CASES = [
    ("hard_assoc_1.npy", 4, 3),
    ("hard8_1.npy", 8, 3),
    ("last_fuzz.npy", 8, 3),
    ("hard_trial16.npy", 8, 3),
]


def brute_force_gamma(rates: np.ndarray, tau: int, c_max: int) -> float:
    """Enumerate every binary matrix; only viable for n*t <= 20."""
    n, t = rates.shape
    nt = n * t
    assert nt <= 20
    best = -1.0
    for start in range(0, 1 << nt, 1 << 16):
        stop = min(start + (1 << 16), 1 << nt)
        codes = np.arange(start, stop, dtype=np.uint32)
        bits = ((codes[:, None] >> np.arange(nt, dtype=np.uint32)) & 1).astype(np.int8)
        mats = bits.reshape(-1, n, t)
        feasible = (
            (mats.sum(axis=2) >= tau).all(axis=1)
            & (mats.sum(axis=1) <= c_max).all(axis=1)
        )
        if not feasible.any():
            continue
        gammas = ((mats[feasible] * rates).sum(axis=2) / t).min(axis=1)
        best = max(best, float(gammas.max()))
    return best


class TestBruteForceAgreement:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(1000 + seed)
        n, t = (4, 5) if seed % 2 == 0 else (5, 4)
        tau = 2
        c_max = 2 if n == 4 else 3
        rates = rng.uniform(0.1, 10.0, size=(n, t))
        assoc, gamma = solve_association(rates, tau, c_max, 0.0, t)
        assoc.validate(c_max)
        expected = brute_force_gamma(rates, tau, c_max)
        assert gamma == pytest.approx(expected, rel=1e-12)

    def test_near_symmetric_rates(self):
        # tiny jitter around a flat landscape, the worst case for LP bounding
        rng = np.random.default_rng(77)
        rates = 1.0 + 0.01 * rng.standard_normal((4, 5))
        assoc, gamma = solve_association(rates, 2, 2, 0.0, 5)
        assert gamma == pytest.approx(brute_force_gamma(rates, 2, 2), rel=1e-12)


class TestWorkedExamples:
    def test_undersubscribed_is_all_ones(self):
        rates = np.array([[5.0, 1.0, 3.0]])
        assoc, gamma = solve_association(rates, 2, 1, 0.0, 3)
        assert np.all(assoc.j == 1)
        assert gamma == pytest.approx(3.0)

    def test_capacity_equal_to_population(self):
        rng = np.random.default_rng(8)
        rates = rng.uniform(0.0, 5.0, size=(3, 6))
        assoc, gamma = solve_association(rates, 2, 3, 0.0, 6)
        assert np.all(assoc.j == 1)
        assert gamma == pytest.approx(float(rates.sum(axis=1).min() / 6.0))

    def test_zero_rates_fall_back_to_cyclic(self):
        assoc, gamma = solve_association(np.zeros((4, 8)), 2, 1, 0.0, 8)
        assert gamma == 0.0
        assoc.validate(1)
        assert np.all(assoc.j.sum(axis=1) == 2)
        assert assoc.qos_met  # no demand, nothing to miss

    def test_zero_rates_with_demand_flag_unmet(self):
        assoc, gamma = solve_association(np.zeros((4, 8)), 2, 1, 1e6, 8)
        assert gamma == 0.0
        assert not assoc.qos_met


class TestGuards:
    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            solve_association(np.ones((2, 5)), 2, 1, 0.0, serve_slots=6)

    def test_tau_longer_than_round(self):
        with pytest.raises(InfeasibilityError):
            solve_association(np.ones((2, 3)), 4, 2, 0.0, 3)

    def test_capacity_shortfall(self):
        # 4 users x tau 3 = 12 slot-demands > 1 x 8 supply
        with pytest.raises(InfeasibilityError):
            solve_association(np.ones((4, 8)), 3, 1, 0.0, 8)


class TestQosFlag:
    def test_floor_compares_against_min_average(self):
        rates = np.array([[5.0, 1.0, 3.0]])
        # optimum is 3 bits/s; the floor is r_on / (tau * dt)
        met, _ = solve_association(rates, 2, 1, 5.9, 3)
        unmet, _ = solve_association(rates, 2, 1, 6.1, 3)
        assert met.qos_met
        assert not unmet.qos_met

    def test_slot_duration_scales_floor(self):
        rates = np.array([[5.0, 1.0, 3.0]])
        assoc, _ = solve_association(rates, 2, 1, 6.1, 3, slot_duration=2.0)
        assert assoc.qos_met  # floor halves with the longer slot


class TestHardInstances:
    @pytest.mark.parametrize("fname,tau,c_max", HARD_CASES)
    def test_solves_and_saturates(self, fname, tau, c_max):
        rates = np.load(DATA / fname)
        n, t = rates.shape
        assoc, gamma = solve_association(rates, tau, c_max, 0.0, t)
        assoc.validate(c_max)
        recomputed = float(((assoc.j * rates).sum(axis=1) / t).min())
        assert gamma == pytest.approx(recomputed, rel=1e-12)
        assert gamma > 0.0
        # oversubscribed optima fill every slot to capacity
        assert np.all(assoc.j.sum(axis=0) == c_max)

    def test_deterministic_rerun(self):
        rates = np.load(DATA / "hard_assoc_1.npy")
        a1, g1 = solve_association(rates, 4, 3, 0.0, rates.shape[1])
        a2, g2 = solve_association(rates, 4, 3, 0.0, rates.shape[1])
        assert g1 == g2
        assert np.array_equal(a1.j, a2.j)


class TestMatrixValidate:
    def test_rejects_nonbinary(self):
        m = AssociationMatrix(j=np.array([[2, 0], [0, 1]]), tau_req=1)
        with pytest.raises(ValueError):
            m.validate(c_max=2)

    def test_rejects_connectivity_shortfall(self):
        m = AssociationMatrix(j=np.array([[1, 0], [0, 1]]), tau_req=2)
        with pytest.raises(ValueError):
            m.validate(c_max=2)

    def test_rejects_capacity_overflow(self):
        m = AssociationMatrix(j=np.ones((3, 2), dtype=int), tau_req=1)
        with pytest.raises(ValueError):
            m.validate(c_max=2)


def test_association_csv_layout(tmp_path):
    m = AssociationMatrix(j=np.array([[1, 0], [0, 1]]), tau_req=1)
    path = tmp_path / "assoc.csv"
    association_to_csv(m, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["user", "slot", "associated"]
    assert rows[1:] == [["0", "0", "1"], ["0", "1", "0"],
                        ["1", "0", "0"], ["1", "1", "1"]]
