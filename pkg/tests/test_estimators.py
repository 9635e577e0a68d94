import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_triangular

import ligandsense as ls
from ligandsense.errors import (
    DomainError,
    IndistinguishableLigandsError,
    NoEventsRetainedError,
)


def rate_vectors(max_types=8):
    @st.composite
    def build(draw):
        m = draw(st.integers(1, max_types))
        chi = draw(st.floats(1.6, 10.0))
        anchor = draw(st.floats(0.1, 5.0))
        return ls.geometric_unbinding_rates(m, chi, anchor)

    return build()


class TestThresholds:
    def test_single_type_has_no_interior(self):
        scheme = ls.build_thresholds(np.array([2.0]), nu=3.0)
        assert scheme.interior.size == 0
        assert scheme.edges[0] == 0.0 and np.isinf(scheme.edges[-1])

    def test_two_type_example(self):
        scheme = ls.build_thresholds(np.array([5.0, 1.0]), nu=3.0)
        assert scheme.interior == pytest.approx([0.6])

    def test_reference_lower_filter(self, default_rates):
        # T_1/5 with k_1 = 625/s and nu = 3 is 960 microseconds
        lower = 3.0 / (5 * 625.0)
        assert lower == pytest.approx(960e-6)
        scheme = ls.build_thresholds(default_rates, nu=3.0, lower=lower)
        assert scheme.edges[0] == pytest.approx(960e-6)
        assert scheme.is_filtering

    def test_nonpositive_nu_rejected(self, default_rates):
        with pytest.raises(DomainError):
            ls.build_thresholds(default_rates, nu=0.0)

    def test_upper_bound_below_interior_rejected(self, default_rates):
        # 120 ms sits below the outermost interior threshold (600 ms)
        with pytest.raises(DomainError):
            ls.build_thresholds(default_rates, nu=3.0, upper=0.120)

    @settings(max_examples=30, deadline=None)
    @given(rate_vectors(), st.floats(0.5, 8.0))
    def test_interior_strictly_increasing(self, rates, nu):
        scheme = ls.build_thresholds(rates, nu)
        assert np.all(np.diff(scheme.interior) > 0)


class TestSMatrix:
    def test_single_type_is_identity(self):
        scheme = ls.build_thresholds(np.array([2.0]), nu=3.0)
        s, w, cond = ls.build_s(scheme, np.array([2.0]))
        assert np.allclose(s, [[1.0]]) and np.allclose(w, [[1.0]])
        assert cond == pytest.approx(1.0)

    def test_two_type_leading_entry(self):
        scheme = ls.build_thresholds(np.array([5.0, 1.0]), nu=3.0)
        s, _, _ = ls.build_s(scheme, np.array([5.0, 1.0]))
        assert s[0, 0] == pytest.approx(1.0 - math.exp(-3.0), abs=1e-12)
        assert s[0, 0] == pytest.approx(0.95021, abs=5e-6)

    @settings(max_examples=30, deadline=None)
    @given(rate_vectors(), st.floats(0.5, 8.0))
    def test_columns_sum_to_one_without_filtering(self, rates, nu):
        scheme = ls.build_thresholds(rates, nu)
        s, _, _ = ls.build_s(scheme, rates)
        assert s.sum(axis=0) == pytest.approx(np.ones(rates.size), abs=1e-12)
        assert np.all((s >= 0) & (s <= 1))

    @settings(max_examples=30, deadline=None)
    @given(rate_vectors(), st.floats(0.5, 8.0))
    def test_inverse_identity(self, rates, nu):
        scheme = ls.build_thresholds(rates, nu)
        s, w, _ = ls.build_s(scheme, rates)
        assert np.abs(s @ w - np.eye(rates.size)).max() < 1e-8

    def test_near_duplicate_rates_raise_typed_error(self):
        rates = np.array([1.0 + 1e-13, 1.0])
        scheme = ls.build_thresholds(rates, nu=3.0)
        with pytest.raises(IndistinguishableLigandsError):
            ls.build_s(scheme, rates)

    def test_degraded_inverse_identities_raise_typed_error(self):
        # conditioning below the hard guard can still break the 1e-8
        # inverse-identity contract of the prebuilt matrices
        rates = ls.geometric_unbinding_rates(5, 1.05, 1.0)
        scheme = ls.build_thresholds(rates, nu=3.0)
        with pytest.raises(IndistinguishableLigandsError, match="inverse identities"):
            ls.EstimatorMatrices.build(scheme, rates)


class TestTriangularMatrices:
    def test_single_type_r_is_identity(self):
        scheme = ls.build_thresholds(np.array([2.0]), nu=6.0)
        assert np.allclose(ls.build_r(scheme, np.array([2.0])), [[1.0]])

    def test_h_structure(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=5.0)
        s, _, _ = ls.build_s(scheme, default_rates)
        h = ls.build_h(scheme, default_rates)
        assert np.all(np.tril(h, -1) == 0)
        assert np.triu(h, 1) == pytest.approx(np.triu(s, 1))
        assert np.diag(h) == pytest.approx(np.exp(-default_rates * scheme.edges[:-1]))

    def test_last_diagonal_of_r(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=5.0)
        r = ls.build_r(scheme, default_rates)
        expected = math.exp(default_rates[-1] * scheme.edges[-2])
        assert r[-1, -1] == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(rate_vectors(), st.floats(5.0, 9.0))
    def test_r_inverts_h(self, rates, nu):
        scheme = ls.build_thresholds(rates, nu)
        h = ls.build_h(scheme, rates)
        r = ls.build_r(scheme, rates)
        assert np.abs(r @ h - np.eye(rates.size)).max() < 1e-8

    @settings(max_examples=30, deadline=None)
    @given(rate_vectors(), st.floats(5.0, 9.0))
    def test_recursion_matches_back_substitution(self, rates, nu):
        scheme = ls.build_thresholds(rates, nu)
        h = ls.build_h(scheme, rates)
        r = ls.build_r(scheme, rates)
        direct = solve_triangular(h, np.eye(rates.size))
        assert np.abs(r - direct).max() <= 1e-8 * max(1.0, np.abs(direct).max())

    def test_low_nu_warns(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=3.0)
        with pytest.warns(UserWarning, match="triangular"):
            ls.build_r(scheme, default_rates)


class TestBinCounts:
    def test_all_events_in_one_interval(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=3.0)
        # interval 3 is [T_2, T_3) = [0.024, 0.12)
        obs = ls.ObservationSet(4, 1.0, np.full(4, 0.05))
        binned = ls.bin_counts(obs, scheme)
        assert binned.counts.tolist() == [0, 0, 4, 0, 0]
        assert binned.retained == 4

    def test_lower_filter_drops_short_event(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=3.0, lower=960e-6)
        obs = ls.ObservationSet(3, 1.0, np.array([500e-6, 0.05, 0.05]))
        binned = ls.bin_counts(obs, scheme)
        assert binned.retained == 2
        assert binned.total == 3

    def test_boundary_goes_to_upper_interval(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=3.0)
        obs = ls.ObservationSet(3, 1.0, np.array([scheme.edges[1], 1e-4, 1e-4]))
        binned = ls.bin_counts(obs, scheme)
        assert binned.counts[1] == 1 and binned.counts[0] == 2

    def test_partition_additivity(self, default_mixture):
        # pooling receptors or binning them separately gives the same counts
        scheme = ls.build_thresholds(default_mixture.unbinding_rates, nu=3.0)
        obs = ls.sample_observations(default_mixture, 900, seed=4)
        whole = ls.bin_counts(obs, scheme).counts
        parts = np.zeros_like(whole)
        for chunk in np.array_split(obs.bound_durations, 7):
            sub = ls.ObservationSet(chunk.size, 1.0, chunk)
            parts += ls.bin_counts(sub, scheme).counts
        assert np.array_equal(whole, parts)

    def test_expected_counts_match_monte_carlo(self, three_type_mixture):
        mix = three_type_mixture
        scheme = ls.build_thresholds(mix.unbinding_rates, nu=3.0)
        s, _, _ = ls.build_s(scheme, mix.unbinding_rates)
        p = s @ mix.ratios
        n, reps = 200, 3000
        totals = np.zeros(3)
        for rep in range(reps):
            obs = ls.sample_observations(mix, n, seed=(31, rep))
            totals += ls.bin_counts(obs, scheme).counts
        mean = totals / reps
        se = np.sqrt(n * p * (1 - p) / reps)
        assert np.all(np.abs(mean - n * p) < 3 * se)


class TestTotalConcentration:
    def test_arithmetic(self):
        assert ls.estimate_total_concentration(1.0, 3, 1.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("n", [0, 1, 2])
    def test_too_few_samples_rejected(self, n):
        with pytest.raises(DomainError):
            ls.estimate_total_concentration(1.0, n, 1.0)

    def test_nonpositive_time_rejected(self):
        with pytest.raises(DomainError):
            ls.estimate_total_concentration(0.0, 10, 1.0)


class TestRatioEstimators:
    def test_single_type_always_one(self):
        binned = ls.BinnedCounts(np.array([17]), 17, 17)
        assert ls.estimate_ratios_unbiased(binned, np.array([[1.0]])) == pytest.approx([1.0])
        assert ls.estimate_ratios_biased(binned, np.array([[1.0]])) == pytest.approx([1.0])

    def test_expected_counts_return_exact_ratios(self, default_rates):
        # moment-matching fixed point: feed n = N S alpha, get alpha back
        scheme = ls.build_thresholds(default_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, default_rates)
        alpha = np.array([0.1, 0.3, 0.2, 0.25, 0.15])
        n = 10_000
        expected_counts = n * (mats.s @ alpha)
        binned = ls.BinnedCounts(expected_counts, n, n)
        assert ls.estimate_ratios_unbiased(binned, mats.w) == pytest.approx(alpha, abs=1e-12)

    def test_no_retained_events_raises(self):
        binned = ls.BinnedCounts(np.zeros(3, dtype=int), 0, 5)
        with pytest.raises(NoEventsRetainedError):
            ls.estimate_ratios_unbiased(binned, np.eye(3))

    def test_unbiasedness_monte_carlo(self, three_type_mixture):
        mix = three_type_mixture
        scheme = ls.build_thresholds(mix.unbinding_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, mix.unbinding_rates)
        est = ls.simulate_ratio_estimates(
            mix.unbinding_rates, mix.ratios, scheme, {"unbiased": mats.w},
            n_samples=2000, trials=4000, seed=(5, 0, 0),
        )
        ratios = est["unbiased"]
        se = ratios.std(axis=0, ddof=1) / math.sqrt(ratios.shape[0])
        assert np.all(np.abs(ratios.mean(axis=0) - mix.ratios) < 3 * se)

    def test_biased_estimator_touches_only_top_counts(self, default_rates):
        scheme = ls.build_thresholds(default_rates, nu=5.0)
        mats = ls.EstimatorMatrices.build(scheme, default_rates)
        counts = np.array([40, 30, 20, 15, 10])
        base = ls.estimate_ratios_biased(ls.BinnedCounts(counts, 115, 115), mats.r)
        # perturbing every lower bin leaves the highest-affinity ratio unchanged
        perturbed = counts + np.array([33, 21, 17, 9, 0])
        moved = ls.estimate_ratios_biased(
            ls.BinnedCounts(perturbed, int(perturbed.sum()), int(perturbed.sum())), mats.r
        )
        expected_last = counts[-1] * mats.r[-1, -1] / 115
        assert base[-1] == pytest.approx(expected_last, rel=1e-12)
        assert moved[-1] == pytest.approx(
            counts[-1] * mats.r[-1, -1] / perturbed.sum(), rel=1e-12
        )

    def test_biased_bias_matches_formula_monte_carlo(self, three_type_mixture):
        mix = three_type_mixture
        scheme = ls.build_thresholds(mix.unbinding_rates, nu=5.0)
        mats = ls.EstimatorMatrices.build(scheme, mix.unbinding_rates)
        est = ls.simulate_ratio_estimates(
            mix.unbinding_rates, mix.ratios, scheme, {"biased": mats.r},
            n_samples=2000, trials=4000, seed=(6, 0, 1),
        )
        ratios = est["biased"]
        predicted_bias = (mats.r - mats.w) @ (mats.s @ mix.ratios)
        se = ratios.std(axis=0, ddof=1) / math.sqrt(ratios.shape[0])
        assert np.all(np.abs(ratios.mean(axis=0) - mix.ratios - predicted_bias) < 3 * se)


class TestEstimateConcentrations:
    @pytest.mark.parametrize("kind", ["unbiased", "biased", "ml_oracle"])
    def test_product_structure_and_counts(self, default_mixture, kind):
        scheme = ls.build_thresholds(default_mixture.unbinding_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, default_mixture.unbinding_rates)
        obs = ls.sample_observations(default_mixture, 600, seed=8)
        est = ls.estimate_concentrations(kind, obs, scheme, mats, 1.0, em_tol=1e-6)
        assert est.kind == kind
        assert est.concentrations == pytest.approx(est.total * est.ratios, rel=1e-12)
        assert est.n_total == 600
        assert est.n_retained == 600

    def test_filtering_splits_counts(self, default_mixture):
        rates = default_mixture.unbinding_rates
        scheme = ls.build_thresholds(rates, nu=3.0, lower=960e-6)
        mats = ls.EstimatorMatrices.build(scheme, rates)
        obs = ls.sample_observations(default_mixture, 5000, seed=12)
        est = ls.estimate_concentrations("unbiased", obs, scheme, mats, 1.0)
        assert est.n_retained < est.n_total == 5000
        # the total-concentration factor must use the full N
        expected_total = ls.estimate_total_concentration(obs.total_unbound_time, 5000, 1.0)
        assert est.total == pytest.approx(expected_total, rel=1e-12)

    def test_identity_plugin(self, default_rates):
        # exact expected inputs reproduce the exact concentrations
        scheme = ls.build_thresholds(default_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, default_rates)
        alpha = np.full(5, 0.2)
        n = 1000
        binned = ls.BinnedCounts(n * (mats.s @ alpha), n, n)
        ratios = ls.estimate_ratios_unbiased(binned, mats.w)
        c_tot = ls.estimate_total_concentration((n - 1) / 1.0, n, 1.0)  # T_u at its mean-inverse
        assert c_tot * ratios == pytest.approx(0.2 * np.ones(5), rel=1e-12)

    def test_clipped_projects_to_simplex(self):
        est = ls.ConcentrationEstimate(
            kind="unbiased", total=2.0,
            ratios=np.array([-0.1, 0.6, 0.5]),
            concentrations=2.0 * np.array([-0.1, 0.6, 0.5]),
            n_total=10, n_retained=10,
        )
        clipped = est.clipped()
        assert np.all(clipped.ratios >= 0)
        assert clipped.ratios.sum() == pytest.approx(1.0)
        assert clipped.concentrations == pytest.approx(clipped.total * clipped.ratios)

    def test_unknown_kind_rejected(self, default_mixture):
        scheme = ls.build_thresholds(default_mixture.unbinding_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, default_mixture.unbinding_rates)
        obs = ls.sample_observations(default_mixture, 10, seed=0)
        with pytest.raises(DomainError):
            ls.estimate_concentrations("other", obs, scheme, mats, 1.0)


class TestEmOracle:
    def test_concentrates_on_generating_component(self):
        mix = ls.LigandMixture(1.0, np.array([5.0, 1.0]), np.array([0.0, 1.0]))
        obs = ls.sample_observations(mix, 20_000, seed=2)
        # boundary optima converge slowly; the loose tol is enough here
        alpha = ls.ml_ratio_oracle(obs.bound_durations, mix.unbinding_rates, tol=1e-6)
        assert alpha[1] > 0.99

    def test_recovers_uniform_ratios(self, default_mixture):
        obs = ls.sample_observations(default_mixture, 100_000, seed=13)
        alpha = ls.ml_ratio_oracle(obs.bound_durations, default_mixture.unbinding_rates)
        assert np.abs(alpha - 0.2).max() < 0.01

    def test_stays_on_simplex(self, three_type_mixture):
        obs = ls.sample_observations(three_type_mixture, 1000, seed=1)
        alpha = ls.ml_ratio_oracle(obs.bound_durations, three_type_mixture.unbinding_rates)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(alpha >= 0)

    def test_likelihood_nondecreasing(self, three_type_mixture):
        mix = three_type_mixture
        obs = ls.sample_observations(mix, 2000, seed=14)
        _, history = ls.ml_ratio_oracle(
            obs.bound_durations, mix.unbinding_rates, return_history=True
        )
        values = [
            ls.log_likelihood(obs, 1.0, a, 1.0, mix.unbinding_rates) for a in history
        ]
        assert np.all(np.diff(values) > -1e-9)

    def test_beats_clipped_moment_estimate(self, default_mixture):
        mix = default_mixture
        scheme = ls.build_thresholds(mix.unbinding_rates, nu=3.0)
        mats = ls.EstimatorMatrices.build(scheme, mix.unbinding_rates)
        obs = ls.sample_observations(mix, 5000, seed=15)
        mom = ls.estimate_concentrations("unbiased", obs, scheme, mats, 1.0).clipped()
        em = ls.ml_ratio_oracle(obs.bound_durations, mix.unbinding_rates, tol=1e-10)
        loglik = lambda a: ls.log_likelihood(obs, 1.0, a, 1.0, mix.unbinding_rates)
        assert loglik(em) >= loglik(mom.ratios) - 1e-6

    def test_single_component_rejected(self):
        with pytest.raises(DomainError):
            ls.ml_ratio_oracle(np.array([0.1, 0.2]), np.array([1.0]))

    def test_nonconvergence_warns(self, three_type_mixture):
        obs = ls.sample_observations(three_type_mixture, 500, seed=16)
        with pytest.warns(UserWarning, match="converge"):
            ls.ml_ratio_oracle(
                obs.bound_durations, three_type_mixture.unbinding_rates,
                tol=1e-14, max_iter=3,
            )
