import math

import numpy as np
import pytest
from scipy.stats import chi2

from aoi_forge.aoi import Allocation, LinkProfile, empirical_psi, expected_linear_aoi, objective_psi
from aoi_forge.network import generate_topology, outage_vector
from aoi_forge.simulate import SimConfig, oma_topology, peak_samples_csv, run_trace, trace_events_csv
from conftest import single_link_topology


def risky_single_link(t_pkt: float = 0.15, target_p: float = 0.4):
    """K=1 topology whose closed-form outage at rate N/t_pkt is target_p."""
    d_kk = 10.0
    n_bits = 5e4
    rate = n_bits / t_pkt
    bandwidth = 10e6
    gamma = math.expm1(math.log(2.0) * rate / bandwidth)
    psd = 10.0 ** ((-134.0 - 30.0) / 10.0)
    sigma2 = psd * bandwidth
    x_needed = -math.log(1.0 - target_p)
    q = gamma * d_kk * sigma2 / x_needed
    q_dbm = 10.0 * math.log10(q) + 30.0
    topo = single_link_topology(d_kk=d_kk, q_dbm=q_dbm)
    profile = LinkProfile(np.array([n_bits]), np.array([False]), 10.0)
    return topo, profile


class TestRunTrace:
    def test_sawtooth_without_outages(self):
        topo = generate_topology(2, 1, q_dbm=60.0)
        profile = LinkProfile.default(1, hi_count=0)
        alloc = Allocation(np.array([0.01]), np.array([1e-6]))
        trace = run_trace(topo, alloc, profile, SimConfig(horizon_s=50.0, t_coh_s=0.15, seed=1))
        lt = trace.links[0]
        assert lt.outage_rate() == 0.0
        peaks = np.asarray(lt.peaks)
        assert peaks.size > 1000
        assert np.allclose(peaks, 0.02, rtol=1e-9)

    def test_outage_rate_matches_closed_form(self):
        topo, profile = risky_single_link()
        t_pkt = 0.15
        alloc = Allocation(np.array([t_pkt]), np.array([0.5]))
        p_cf = outage_vector(topo, profile.payload_bits / alloc.t)[0]
        assert 0.3 < p_cf < 0.5
        n_packets = 30_000
        sim = SimConfig(horizon_s=n_packets * t_pkt, t_coh_s=t_pkt, seed=3)
        trace = run_trace(topo, alloc, profile, sim)
        lt = trace.links[0]
        n = len(lt.packets)
        se = math.sqrt(p_cf * (1.0 - p_cf) / n)
        assert abs(lt.outage_rate() - p_cf) <= 3.0 * se

    def test_mean_peak_matches_linear_expectation(self):
        topo, profile = risky_single_link()
        t_pkt = 0.15
        alloc = Allocation(np.array([t_pkt]), np.array([0.5]))
        p_cf = outage_vector(topo, profile.payload_bits / alloc.t)[0]
        sim = SimConfig(horizon_s=30_000 * t_pkt, t_coh_s=t_pkt, seed=5)
        trace = run_trace(topo, alloc, profile, sim)
        peaks = np.asarray(trace.links[0].peaks) / profile.tau_bar
        want = expected_linear_aoi(t_pkt, p_cf, profile.tau_bar)
        se = np.std(peaks) / math.sqrt(peaks.size)
        assert abs(np.mean(peaks) - want) <= 3.0 * se

    def test_peak_distribution_chi_square(self):
        # geometric pmf over retransmission counts v in 0..5, 0.1% level
        topo, profile = risky_single_link()
        t_pkt = 0.15
        alloc = Allocation(np.array([t_pkt]), np.array([0.5]))
        p_cf = outage_vector(topo, profile.payload_bits / alloc.t)[0]
        sim = SimConfig(horizon_s=100_000 * t_pkt, t_coh_s=t_pkt, seed=7)
        trace = run_trace(topo, alloc, profile, sim)
        peaks = np.asarray(trace.links[0].peaks)
        v = np.rint(peaks / t_pkt).astype(int) - 2
        n = v.size
        observed = np.array([np.sum(v == j) for j in range(6)] + [np.sum(v >= 6)])
        probs = np.array([p_cf**j * (1 - p_cf) for j in range(6)] + [p_cf**6])
        expected = probs * n
        stat = float(np.sum((observed - expected) ** 2 / expected))
        assert stat <= chi2.ppf(0.999, df=6)

    def test_slope_one_between_resets(self):
        topo, profile = risky_single_link()
        alloc = Allocation(np.array([0.15]), np.array([0.5]))
        trace = run_trace(topo, alloc, profile, SimConfig(horizon_s=60.0, t_coh_s=0.15, seed=9))
        lt = trace.links[0]
        bp_t = np.array([b[0] for b in lt.breakpoints])
        # sample pairs inside each linear segment
        rng = np.random.default_rng(0)
        for _ in range(50):
            i = rng.integers(1, len(bp_t) - 2)
            t0, t1 = bp_t[i], bp_t[i + 1]
            if t1 - t0 < 1e-6:
                continue
            a, b = lt.aoi_at(np.array([t0 + 0.25 * (t1 - t0), t0 + 0.75 * (t1 - t0)]))
            assert (b - a) == pytest.approx(0.5 * (t1 - t0), rel=1e-9)

    def test_multi_block_packets_compound_outage(self):
        topo, profile = risky_single_link()
        t_coh = 0.15
        alloc = Allocation(np.array([2 * t_coh]), np.array([0.9]))
        rate = profile.payload_bits / alloc.t
        p_single = outage_vector(topo, rate)[0]
        sim = SimConfig(horizon_s=40_000 * t_coh, t_coh_s=t_coh, seed=11)
        trace = run_trace(topo, alloc, profile, sim)
        lt = trace.links[0]
        expected = 1.0 - (1.0 - p_single) ** 2
        n = len(lt.packets)
        se = math.sqrt(expected * (1 - expected) / n)
        assert abs(lt.outage_rate() - expected) <= 3.5 * se

    def test_empirical_psi_consistent_with_objective(self):
        topo, profile = risky_single_link()
        t_pkt = 0.15
        alloc = Allocation(np.array([t_pkt]), np.array([0.5]))
        p_cf = outage_vector(topo, profile.payload_bits / alloc.t)[0]
        sim = SimConfig(horizon_s=30_000 * t_pkt, t_coh_s=t_pkt, seed=13)
        trace = run_trace(topo, alloc, profile, sim)
        psi_emp = empirical_psi(trace.peak_arrays(), profile)
        psi_cf = objective_psi(Allocation(alloc.t, np.array([p_cf])), profile)
        peaks = np.asarray(trace.links[0].peaks) / profile.tau_bar
        se = np.std(peaks) / math.sqrt(peaks.size)
        assert abs(psi_emp - psi_cf) <= 3.0 * se

    def test_deterministic_per_seed(self):
        topo, profile = risky_single_link()
        alloc = Allocation(np.array([0.15]), np.array([0.5]))
        sim = SimConfig(horizon_s=50.0, t_coh_s=0.15, seed=21)
        t1 = run_trace(topo, alloc, profile, sim)
        t2 = run_trace(topo, alloc, profile, sim)
        assert t1.links[0].packets == t2.links[0].packets
        assert t1.links[0].peaks == t2.links[0].peaks

    def test_time_average_aoi_positive_and_finite(self):
        topo, profile = risky_single_link()
        alloc = Allocation(np.array([0.15]), np.array([0.5]))
        trace = run_trace(topo, alloc, profile, SimConfig(horizon_s=60.0, t_coh_s=0.15, seed=2))
        avg = trace.links[0].time_average_aoi(trace.horizon_s)
        assert 0.0 < avg < trace.horizon_s


class TestOmaTopology:
    def test_k1_identity(self):
        topo = generate_topology(11, 1)
        oma = oma_topology(topo)
        assert oma.B == topo.B
        assert oma.sigma2 == topo.sigma2
        assert np.array_equal(oma.d, topo.d)

    def test_bandwidth_split(self, topo5):
        oma = oma_topology(topo5)
        assert oma.B == pytest.approx(2e6)
        assert oma.sigma2 == pytest.approx(topo5.sigma2 / 5.0)
        assert oma.psd == pytest.approx(topo5.psd)
        assert np.array_equal(oma.coupling, topo5.coupling)  # benchmark keeps interference

    def test_strict_orthogonal_single_link_form(self, topo5):
        oma = oma_topology(topo5, strict_orthogonal=True)
        assert np.array_equal(oma.coupling, np.eye(5))
        r = np.full(5, 2e6)
        got = outage_vector(oma, r)
        for k in range(5):
            gamma = math.expm1(math.log(2.0) * r[k] / oma.B)
            want = -math.expm1(
                -gamma * oma.d[k, k] ** (oma.mu / 2.0) * oma.sigma2 / oma.q[k]
            )
            assert got[k] == pytest.approx(want, rel=1e-12)


class TestTraceExport:
    def test_csv_outputs(self, tmp_path):
        topo, profile = risky_single_link()
        alloc = Allocation(np.array([0.15]), np.array([0.5]))
        trace = run_trace(topo, alloc, profile, SimConfig(horizon_s=15.0, t_coh_s=0.15, seed=4))
        events = tmp_path / "events.csv"
        peaks = tmp_path / "peaks.csv"
        trace_events_csv(trace, events, "abc123")
        peak_samples_csv(trace, peaks, "abc123")
        lines = events.read_text().strip().splitlines()
        assert lines[0] == "time_s,link_id,aoi_s,event,scenario_hash"
        kinds = {row.split(",")[3] for row in lines[1:]}
        assert kinds <= {"none", "delivery", "outage"}
        assert "delivery" in kinds and "outage" in kinds
        n_peak_rows = len(peaks.read_text().strip().splitlines()) - 1
        assert n_peak_rows == len(trace.links[0].peaks)

    def test_psi_time_series_shape(self):
        topo, profile = risky_single_link()
        alloc = Allocation(np.array([0.15]), np.array([0.5]))
        trace = run_trace(topo, alloc, profile, SimConfig(horizon_s=9.0, t_coh_s=0.15, seed=5))
        times, series = trace.psi_time_series(profile, dt=0.015)
        assert times.shape == series.shape
        assert times[0] == 0.0 and times[-1] <= 9.0 + 1e-9
        assert np.all(series >= 0.0)
