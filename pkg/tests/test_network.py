import math

import numpy as np
import pytest

from aoi_forge.network import (
    PlacementBounds,
    PlacementError,
    Topology,
    achievable_rate,
    closed_form_outage,
    dbm_to_watt,
    generate_topology,
    outage_vector,
    sample_channel,
    sinr,
    topology_from_dict,
    topology_to_dict,
    worst_case_rates,
)
from conftest import single_link_topology
from oracles import mc_outage_frequency


class TestPlacement:
    def test_default_bounds_hold(self):
        topo = generate_topology(1, 5)
        own = np.diag(topo.d)
        assert np.all((own >= 5.0) & (own <= 25.0))
        cross = topo.d[~np.eye(5, dtype=bool)]
        assert np.all(cross >= 20.0)
        for xy in (topo.sensor_xy, topo.actuator_xy):
            assert np.all((xy >= 0.0) & (xy <= 100.0))

    def test_single_pair_has_no_cross_constraint(self):
        topo = generate_topology(1, 1)
        assert topo.K == 1
        assert 5.0 <= topo.d[0, 0] <= 25.0

    def test_same_seed_is_bit_identical(self):
        a = generate_topology(7, 4)
        b = generate_topology(7, 4)
        assert np.array_equal(a.sensor_xy, b.sensor_xy)
        assert np.array_equal(a.actuator_xy, b.actuator_xy)
        assert np.array_equal(a.d, b.d)

    def test_overconstrained_area_raises(self):
        bounds = PlacementBounds(area_m=30.0, cross_min_m=28.0, max_attempts=2000)
        with pytest.raises(PlacementError):
            generate_topology(0, 12, bounds)

    def test_radio_constants(self):
        topo = generate_topology(2, 3, q_dbm=20.0, psd_dbm_hz=-134.0, bandwidth_hz=10e6)
        assert topo.q == pytest.approx([0.1] * 3)
        assert topo.sigma2 == pytest.approx(dbm_to_watt(-134.0) * 10e6)


class TestChannel:
    def test_mean_gain_matches_path_loss(self, topo3):
        rng = np.random.default_rng(42)
        n = 100_000
        draws = np.array([sample_channel(topo3, rng).gain[0, 0] for _ in range(0)])
        # vectorized equivalent of n sample_channel calls for the (0, 0) entry
        fading = rng.exponential(1.0, size=n)
        gains = fading * topo3.d[0, 0] ** (-topo3.mu / 2.0)
        expected = topo3.d[0, 0] ** (-topo3.mu / 2.0)
        se = expected / math.sqrt(n)
        assert abs(gains.mean() - expected) <= 3.0 * se

    def test_mu_zero_means_unit_mean_gain(self):
        topo = generate_topology(3, 2, mu=0.0)
        rng = np.random.default_rng(0)
        total = np.zeros((2, 2))
        n = 20_000
        for _ in range(n):
            total += sample_channel(topo, rng).gain
        assert np.allclose(total / n, 1.0, atol=3.0 / math.sqrt(n) + 0.02)

    def test_fixed_seed_reproducible(self, topo3):
        g1 = sample_channel(topo3, np.random.default_rng(9)).gain
        g2 = sample_channel(topo3, np.random.default_rng(9)).gain
        assert np.array_equal(g1, g2)


class TestSinrAndRate:
    def test_single_link_unit_case(self):
        topo = single_link_topology()
        real_gain = np.array([[topo.sigma2 / topo.q[0]]])
        from aoi_forge.network import ChannelRealization

        real = ChannelRealization(gain=real_gain)
        assert sinr(topo, real, 0) == pytest.approx(1.0, rel=1e-14)
        assert achievable_rate(topo, real, 0) == pytest.approx(topo.B, rel=1e-14)

    def test_interference_dominant_limit(self, topo5):
        rng = np.random.default_rng(3)
        real = sample_channel(topo5, rng)
        g = real.gain
        q = topo5.q
        interference = float(g[:, 0] @ q) - g[0, 0] * q[0]
        assert interference > 1e3 * topo5.sigma2  # interference-dominated regime
        approx = g[0, 0] * q[0] / interference
        assert sinr(topo5, real, 0) == pytest.approx(approx, rel=2e-3)

    def test_matches_hand_rolled_evaluation(self, topo5):
        rng = np.random.default_rng(11)
        real = sample_channel(topo5, rng)
        for k in range(5):
            num = real.gain[k, k] * topo5.q[k]
            den = topo5.sigma2
            for i in range(5):
                if i != k:
                    den += real.gain[i, k] * topo5.q[i]
            assert sinr(topo5, real, k) == pytest.approx(num / den, rel=1e-12)
            expected_rate = topo5.B * math.log2(1.0 + num / den)
            assert achievable_rate(topo5, real, k) == pytest.approx(expected_rate, rel=1e-12)

    @pytest.mark.parametrize("snr,factor", [(1.0, 1.0), (3.0, 2.0)])
    def test_rate_log_values(self, snr, factor):
        topo = single_link_topology(bandwidth_hz=10e6)
        from aoi_forge.network import ChannelRealization

        real = ChannelRealization(gain=np.array([[snr * topo.sigma2 / topo.q[0]]]))
        assert achievable_rate(topo, real, 0) == pytest.approx(1e7 * factor, rel=1e-12)


class TestClosedFormOutage:
    def test_zero_rate_gives_zero_outage(self, topo5):
        assert closed_form_outage(topo5, np.zeros(5), 0) == 0.0

    def test_single_link_exponential_point(self):
        topo = single_link_topology(d_kk=10.0)
        # rate chosen so (2**(r/B)-1) * d**(mu/2) * sigma2 / q == 1
        gamma = topo.q[0] / (topo.d[0, 0] ** (topo.mu / 2.0) * topo.sigma2)
        r = topo.B * math.log2(1.0 + gamma)
        p = closed_form_outage(topo, np.array([r]), 0)
        assert p == pytest.approx(0.6321205588285577, rel=1e-12)

    def test_matches_monte_carlo_k3(self, topo3):
        rng = np.random.default_rng(17)
        from aoi_forge.network import sample_rate_statistics

        rates, _ = sample_rate_statistics(topo3, 4000, rng)
        r_test = np.quantile(rates, 0.5, axis=0)
        p_cf = outage_vector(topo3, r_test)
        p_mc = mc_outage_frequency(topo3, r_test, 1_000_000, seed=23)
        se = np.sqrt(p_cf * (1.0 - p_cf) / 1_000_000)
        assert np.all(np.abs(p_mc - p_cf) <= 3.0 * se)

    def test_monotone_in_rate(self, topo3):
        rates = np.linspace(1e5, 4e7, 80)
        values = [closed_form_outage(topo3, np.full(3, r), 1) for r in rates]
        assert np.all(np.diff(values) >= -1e-15)
        assert 0.0 <= min(values) and max(values) <= 1.0

    def test_zero_interferer_powers_degenerate_to_single_link(self):
        base = generate_topology(4, 3)
        lone = Topology(
            sensor_xy=base.sensor_xy,
            actuator_xy=base.actuator_xy,
            d=base.d,
            mu=base.mu,
            q=np.array([base.q[0], 1e-300, 1e-300]),
            sigma2=base.sigma2,
            B=base.B,
            d_norm=base.d_norm,
            coupling=base.coupling,
        )
        r = 5e6
        got = closed_form_outage(lone, np.array([r, r, r]), 0)
        gamma = math.expm1(math.log(2.0) * r / lone.B)
        want = -math.expm1(-gamma * lone.d[0, 0] ** (lone.mu / 2.0) * lone.sigma2 / lone.q[0])
        assert got == pytest.approx(want, rel=1e-9)


class TestWorstCaseRates:
    def test_m_equals_one_is_single_realization(self, topo3):
        seed = 31
        rates = worst_case_rates(topo3, 1, np.random.default_rng(seed))
        rng = np.random.default_rng(seed)
        fading = rng.exponential(1.0, size=(1, 3, 3))
        gains = fading * topo3.path_gain()[None, :, :]
        from aoi_forge.network import rates_for_gains

        assert np.allclose(rates, rates_for_gains(topo3, gains)[0], rtol=1e-14)

    def test_nested_sample_monotonicity(self, topo3):
        r_small = worst_case_rates(topo3, 10, np.random.default_rng(2))
        r_large = worst_case_rates(topo3, 100, np.random.default_rng(2))
        assert np.all(r_large <= r_small + 1e-12)

    def test_order_statistic_outage_scale(self):
        topo = single_link_topology()
        M = 1000
        samples = [
            closed_form_outage(
                topo, worst_case_rates(topo, M, np.random.default_rng(s)), 0
            )
            for s in range(20)
        ]
        mean_out = float(np.mean(samples))
        # E[outage at the min of M rates] = 1/(M+1)
        assert 0.0 < mean_out <= 3.0 / M


class TestSerialization:
    def test_round_trip(self, topo5):
        data = topology_to_dict(topo5)
        back = topology_from_dict(data)
        assert np.allclose(back.d, topo5.d, rtol=1e-12)
        assert np.allclose(back.q, topo5.q, rtol=1e-12)
        assert back.sigma2 == pytest.approx(topo5.sigma2, rel=1e-12)
        assert back.B == topo5.B and back.mu == topo5.mu

    def test_coupling_round_trip(self, topo5):
        from dataclasses import replace

        masked = replace(topo5, coupling=np.eye(5))
        back = topology_from_dict(topology_to_dict(masked))
        assert np.array_equal(back.coupling, np.eye(5))

    def test_invalid_shapes_rejected(self):
        with pytest.raises(ValueError):
            topology_from_dict(
                {"sensors_m": [[0, 0]], "actuators_m": [[1, 1], [2, 2]],
                 "q_dbm": 20, "psd_dbm_hz": -134, "bandwidth_hz": 1e7}
            )
