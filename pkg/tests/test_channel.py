"""Link-model tests: closed-form identities and a high-precision rate oracle."""

import mpmath
import numpy as np
import pytest

from uavnet.channel import (
    LOS,
    NLOS,
    LinkGeometry,
    average_rates,
    draw_fading,
    effective_gain,
    fading_power_table,
    geometry,
    link_table,
    los_probability,
    path_loss,
    rate,
)
from uavnet.scenario import SPEED_OF_LIGHT, seeded_rng


class TestGeometry:
    def test_three_four_five_link(self):
        geom = geometry(np.array([0.0, 0.0, 4.0]), np.array([3.0, 0.0]))
        assert geom.horizontal_dist == pytest.approx(3.0)
        assert geom.dist_3d == pytest.approx(5.0)
        assert geom.elevation_deg == pytest.approx(np.degrees(np.arcsin(0.8)))

    def test_overhead_user_is_ninety_degrees(self):
        geom = geometry(np.array([2.0, 7.0, 30.0]), np.array([2.0, 7.0]))
        assert geom.horizontal_dist == 0.0
        assert geom.elevation_deg == pytest.approx(90.0)

    def test_degenerate_zero_range(self):
        geom = geometry(np.array([1.0, 1.0, 0.0]), np.array([1.0, 1.0]))
        assert geom.dist_3d == 0.0
        assert geom.elevation_deg == 90.0


class TestLosProbability:
    def test_value_at_reference_angle(self):
        b1, b2 = 9.61, 0.16
        assert los_probability(b1, b1, b2) == pytest.approx(1.0 / (1.0 + b1))

    def test_monotone_in_elevation(self):
        angles = np.linspace(0.0, 90.0, 181)
        p = los_probability(angles, 9.61, 0.16)
        assert np.all(np.diff(p) > 0.0)
        assert p[0] > 0.0 and p[-1] < 1.0

    def test_scalar_in_scalar_out(self):
        assert isinstance(los_probability(45.0, 9.61, 0.16), float)


class TestPathLoss:
    def test_square_law(self):
        base = path_loss(100.0, 9e8, 1.0)
        assert path_loss(200.0, 9e8, 1.0) == pytest.approx(4.0 * base)
        assert path_loss(100.0, 1.8e9, 1.0) == pytest.approx(4.0 * base)

    def test_excess_factor_scales_linearly(self):
        assert path_loss(50.0, 9e8, 20.0) == pytest.approx(
            20.0 * path_loss(50.0, 9e8, 1.0)
        )

    def test_unit_distance_formula(self):
        d, f = 123.0, 2.4e9
        expected = (4.0 * np.pi * f * d / SPEED_OF_LIGHT) ** 2
        assert path_loss(d, f, 1.0) == pytest.approx(expected, rel=1e-14)


class TestEffectiveGain:
    def test_regime_switch_at_threshold(self, small_cfg):
        fading = np.ones(small_cfg.antennas)
        high = LinkGeometry(horizontal_dist=10.0, dist_3d=60.0, elevation_deg=80.0)
        low = LinkGeometry(horizontal_dist=60.0, dist_3d=60.0, elevation_deg=10.0)
        lb_hi = effective_gain(high, small_cfg, fading)
        lb_lo = effective_gain(low, small_cfg, fading)
        assert lb_hi.regime == LOS
        assert lb_lo.regime == NLOS
        # same slant range, so the gain ratio is exactly the excess-factor ratio
        assert lb_hi.gain / lb_lo.gain == pytest.approx(
            small_cfg.eta_nlos / small_cfg.eta_los
        )

    def test_mrt_gain_is_squared_norm_over_loss(self, small_cfg):
        rng = seeded_rng(5, 0)
        fading = draw_fading(rng, small_cfg.antennas)
        geom = LinkGeometry(horizontal_dist=30.0, dist_3d=50.0, elevation_deg=53.0)
        lb = effective_gain(geom, small_cfg, fading)
        h2 = float(np.sum(np.abs(fading) ** 2))
        assert lb.gain == pytest.approx(h2 / lb.path_loss, rel=1e-14)


class TestRate:
    def test_matches_high_precision_reference(self, small_cfg):
        mpmath.mp.dps = 50
        n0 = small_cfg.noise_psd
        rng = np.random.default_rng(20260814)
        for _ in range(200):
            b = float(10.0 ** rng.uniform(3.0, 7.5))
            p = float(10.0 ** rng.uniform(-4.0, 1.0))
            snr = float(10.0 ** rng.uniform(-4.0, 6.0))
            g = snr * b * n0 / p
            ref = mpmath.mpf(b) * mpmath.log(
                1 + mpmath.mpf(p) * mpmath.mpf(g) / (mpmath.mpf(b) * mpmath.mpf(n0)),
                2,
            )
            got = rate(b, p, g, small_cfg)
            assert got == pytest.approx(float(ref), rel=1e-10)

    def test_zero_bandwidth_yields_zero(self, small_cfg):
        assert rate(0.0, 1.0, 1e-6, small_cfg) == 0.0
        out = rate(np.array([0.0, 1e6]), 1.0, 1e-6, small_cfg)
        assert out[0] == 0.0 and out[1] > 0.0
        assert np.all(np.isfinite(out))

    def test_monotone_in_power(self, small_cfg):
        powers = np.linspace(1e-3, 1.0, 50)
        rates = rate(1e6, powers, 1e-9, small_cfg)
        assert np.all(np.diff(rates) > 0.0)


class TestFading:
    def test_unit_average_power(self):
        rng = seeded_rng(9, 1)
        h = draw_fading(rng, 4, size=20000)
        assert h.shape == (20000, 4)
        assert np.iscomplexobj(h)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, abs=0.02)
        assert np.var(h.real) == pytest.approx(0.5, abs=0.02)

    def test_power_table_matches_draws(self):
        table = fading_power_table(seeded_rng(9, 2), 3, 5, antennas=4)
        h = draw_fading(seeded_rng(9, 2), 4, size=(3, 5))
        np.testing.assert_allclose(table, np.sum(np.abs(h) ** 2, axis=-1), atol=0)
        assert table.shape == (3, 5)


class TestLinkTable:
    def test_matches_per_link_loop(self, small_cfg):
        rng = np.random.default_rng(31)
        n, t = 4, 7
        traj = np.column_stack(
            [rng.uniform(0, 60, t), rng.uniform(0, 60, t), rng.uniform(20, 80, t)]
        )
        users = rng.uniform(0, 60, size=(n, 2))
        power = rng.uniform(0.1, 4.0, size=(n, t))
        table = link_table(traj, users, small_cfg, power)
        for u in range(n):
            for s in range(t):
                geom = geometry(traj[s], users[u])
                lb = effective_gain(geom, small_cfg, np.array([1.0]))
                assert table.dist_3d[u, s] == pytest.approx(geom.dist_3d, rel=1e-12)
                assert table.p_los[u, s] == pytest.approx(lb.p_los, rel=1e-12)
                assert table.los_mask[u, s] == (lb.regime == LOS)
                assert table.path_loss[u, s] == pytest.approx(lb.path_loss, rel=1e-12)
                assert table.gain[u, s] == pytest.approx(
                    power[u, s] / lb.path_loss, rel=1e-12
                )

    def test_per_slot_user_positions(self, small_cfg):
        t = 5
        traj = np.tile([30.0, 30.0, 50.0], (t, 1))
        moving = np.zeros((1, t, 2))
        moving[0, :, 0] = np.linspace(0.0, 30.0, t)
        table = link_table(traj, moving, small_cfg, np.ones((1, t)))
        assert np.all(np.diff(table.dist_3d[0]) < 0.0)  # walking toward the hover point


class TestAverageRates:
    def test_matches_dense_loop(self, small_cfg):
        rng = np.random.default_rng(17)
        n, t = 5, 9
        assoc = (rng.random((n, t)) < 0.5).astype(float)
        bw = rng.uniform(0.0, 2e6, size=(n, t))
        power = rng.uniform(1e-3, 1.0, size=(n, t))
        gain = 10.0 ** rng.uniform(-12.0, -6.0, size=(n, t))
        serve_slots = 6
        got = average_rates(assoc, bw, power, gain, small_cfg, serve_slots)
        for u in range(n):
            total = 0.0
            for s in range(t):
                if assoc[u, s] > 0:
                    total += rate(bw[u, s], power[u, s], gain[u, s], small_cfg)
            assert got[u] == pytest.approx(total / serve_slots, rel=1e-12)
