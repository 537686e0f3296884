import numpy as np
import pytest

from aoi_forge.aoi import (
    Allocation,
    LinkProfile,
    RegulationError,
    empirical_psi,
    expected_exp_aoi,
    expected_linear_aoi,
    objective_psi,
    peak_aoi_pmf,
)
from oracles import series_exp_aoi, series_linear_aoi


class TestPeakAoiPmf:
    def test_no_retransmissions_single_atom(self):
        pmf = peak_aoi_pmf(0.3, 0.0, 10)
        assert pmf[0] == (0.6, 1.0)
        assert all(mass == 0.0 for _, mass in pmf[1:])

    def test_direct_substitution(self):
        pmf = peak_aoi_pmf(1.0, 0.5, 5)
        value, mass = pmf[1]
        assert value == 3.0
        assert mass == 0.25

    def test_total_mass_geometric_tail(self):
        pmf = peak_aoi_pmf(1.0, 0.5, 60)
        total = sum(mass for _, mass in pmf)
        assert abs(total - (1.0 - 0.5**61)) < 1e-18
        assert abs(total - 1.0) <= 1e-18

    def test_masses_nonnegative_and_sum_exact(self):
        for p in (0.0, 0.2, 0.9):
            pmf = peak_aoi_pmf(0.5, p, 40)
            masses = np.array([m for _, m in pmf])
            assert np.all(masses >= 0.0)
            assert sum(masses) == pytest.approx(1.0 - p**41, abs=1e-15)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            peak_aoi_pmf(1.0, 1.0, 5)
        with pytest.raises(ValueError):
            peak_aoi_pmf(0.0, 0.5, 5)
        with pytest.raises(ValueError):
            peak_aoi_pmf(1.0, 0.5, -1)


class TestExpectedLinearAoi:
    def test_zero_retransmission_case(self):
        assert expected_linear_aoi(1.0, 0.0, 10.0) == pytest.approx(0.2, abs=1e-15)

    def test_half_outage_literal(self):
        # series oracle value: 2*0.1 + (0.5/0.5)*0.1
        assert expected_linear_aoi(1.0, 0.5, 10.0) == pytest.approx(0.3, abs=1e-12)
        assert expected_linear_aoi(1.0, 0.5, 10.0) == pytest.approx(
            series_linear_aoi(1.0, 0.5, 10.0), abs=1e-12
        )

    def test_zero_time(self):
        for p in (0.0, 0.3, 0.9):
            assert expected_linear_aoi(0.0, p, 10.0) == 0.0

    def test_series_agreement_grid(self):
        for t in np.linspace(0.05, 4.0, 10):
            for p in np.linspace(0.0, 0.99, 12):
                closed = expected_linear_aoi(t, p, 10.0)
                assert closed == pytest.approx(series_linear_aoi(t, p, 10.0), abs=1e-9)

    def test_strictly_increasing_in_t_and_p(self):
        t = np.linspace(0.01, 3.0, 30)
        p = np.linspace(0.0, 0.95, 30)
        vals_t = expected_linear_aoi(t, 0.4, 10.0)
        vals_p = expected_linear_aoi(1.0, p, 10.0)
        assert np.all(np.diff(vals_t) > 0)
        assert np.all(np.diff(vals_p) > 0)


class TestExpectedExpAoi:
    def test_zero_time_is_one(self):
        for p in (0.0, 0.5, 0.99):
            assert expected_exp_aoi(0.0, p, 10.0) == pytest.approx(1.0, abs=1e-15)

    def test_no_outage_literal(self):
        assert expected_exp_aoi(1.0, 0.0, 10.0) == pytest.approx(
            1.148698354997035, rel=1e-12
        )

    def test_half_outage_literal(self):
        # frozen from the truncated-series oracle
        got = expected_exp_aoi(1.0, 0.5, 10.0)
        assert got == pytest.approx(1.2375194078546246, rel=1e-12)
        assert got == pytest.approx(series_exp_aoi(1.0, 0.5, 10.0), abs=1e-12)

    def test_series_agreement_grid(self):
        for t in np.linspace(0.05, 4.0, 10):
            for p in np.linspace(0.0, 0.99, 12):
                if 2.0 ** (t / 10.0) * p > 0.99:
                    continue
                closed = expected_exp_aoi(t, p, 10.0)
                assert closed == pytest.approx(series_exp_aoi(t, p, 10.0), abs=1e-9)

    def test_regulation_violation_raises(self):
        with pytest.raises(RegulationError):
            expected_exp_aoi(10.0, 0.6, 10.0)  # 2**1 * 0.6 > 1

    def test_monotone_and_lower_bound(self):
        t = np.linspace(0.01, 2.0, 25)
        p = np.linspace(0.0, 0.8, 25)
        vals_t = expected_exp_aoi(t, 0.3, 10.0)
        vals_p = expected_exp_aoi(1.0, p, 10.0)
        assert np.all(np.diff(vals_t) > 0)
        assert np.all(np.diff(vals_p) > 0)
        # numerator bound: E >= 2**(2t/tau) * (1-p)
        for ti in t:
            for pi in p:
                e = expected_exp_aoi(ti, pi, 10.0)
                assert e >= 2.0 ** (2 * ti / 10.0) * (1 - pi) - 1e-12
                assert e >= 1.0 - 1e-12


class TestObjectivePsi:
    def test_all_lo_symmetric(self):
        profile = LinkProfile(np.full(4, 5e4), np.zeros(4, dtype=bool), 10.0)
        alloc = Allocation(np.full(4, 1.0), np.full(4, 0.5))
        assert objective_psi(alloc, profile) == pytest.approx(
            4 * expected_linear_aoi(1.0, 0.5, 10.0), rel=1e-14
        )

    def test_mixed_two_link_literal(self):
        profile = LinkProfile(np.full(2, 5e4), np.array([False, True]), 10.0)
        alloc = Allocation(np.array([1.0, 1.0]), np.array([0.5, 0.5]))
        assert objective_psi(alloc, profile) == pytest.approx(
            1.5375194078546246, rel=1e-12
        )

    def test_empty_hi_set_is_purely_linear(self):
        profile = LinkProfile(np.full(3, 5e4), np.zeros(3, dtype=bool), 10.0)
        alloc = Allocation(np.array([0.5, 1.0, 2.0]), np.array([0.1, 0.2, 0.3]))
        expected = sum(
            expected_linear_aoi(t, p, 10.0) for t, p in zip(alloc.t, alloc.p)
        )
        assert objective_psi(alloc, profile) == pytest.approx(expected, rel=1e-14)

    def test_propagates_regulation_violation(self):
        profile = LinkProfile(np.full(1, 5e4), np.array([True]), 10.0)
        alloc = Allocation(np.array([10.0]), np.array([0.6]))
        with pytest.raises(RegulationError):
            objective_psi(alloc, profile)


class TestEmpiricalPsi:
    def test_degenerate_samples_equal_closed_form(self):
        profile = LinkProfile(np.full(2, 5e4), np.zeros(2, dtype=bool), 10.0)
        t = np.array([0.4, 0.8])
        samples = [np.full(50, 2 * t[0]), np.full(70, 2 * t[1])]
        alloc = Allocation(t, np.zeros(2) + 0.0)
        assert empirical_psi(samples, profile) == pytest.approx(
            objective_psi(alloc, profile), rel=1e-14
        )

    def test_single_sample_lo(self):
        profile = LinkProfile(np.array([5e4]), np.array([False]), 10.0)
        assert empirical_psi([np.array([3.7])], profile) == pytest.approx(0.37)

    def test_monte_carlo_consistency_with_pmf(self):
        rng = np.random.default_rng(100)
        t, p, tau = 0.8, 0.45, 10.0
        n = 100_000
        failures = rng.geometric(1.0 - p, size=n) - 1
        peaks = (2.0 + failures) * t
        profile_lo = LinkProfile(np.array([5e4]), np.array([False]), tau)
        est = empirical_psi([peaks], profile_lo)
        want = expected_linear_aoi(t, p, tau)
        se = np.std(peaks / tau) / np.sqrt(n)
        assert abs(est - want) <= 3.0 * se
        profile_hi = LinkProfile(np.array([5e4]), np.array([True]), tau)
        est_hi = empirical_psi([peaks], profile_hi)
        want_hi = expected_exp_aoi(t, p, tau)
        se_hi = np.std(np.exp2(peaks / tau)) / np.sqrt(n)
        assert abs(est_hi - want_hi) <= 3.0 * se_hi

    def test_empty_trace_raises(self):
        profile = LinkProfile(np.full(2, 5e4), np.zeros(2, dtype=bool), 10.0)
        with pytest.raises(ValueError):
            empirical_psi([np.array([1.0]), np.array([])], profile)


class TestValidation:
    def test_allocation_invariants(self):
        with pytest.raises(ValueError):
            Allocation(np.array([0.0]), np.array([0.5]))
        with pytest.raises(ValueError):
            Allocation(np.array([1.0]), np.array([1.0]))
        alloc = Allocation(np.array([1.0]), np.array([0.5]))
        assert alloc.regulation_margin(10.0)[0] == pytest.approx(1 - 2 ** 0.1 * 0.5)

    def test_profile_partition(self):
        profile = LinkProfile.default(5)
        assert profile.hi_indices.tolist() == [0, 1]
        assert profile.lo_indices.tolist() == [2, 3, 4]
        assert set(profile.hi_indices) | set(profile.lo_indices) == set(range(5))
