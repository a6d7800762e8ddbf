import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from gradsparse import gradmodel as gm
from gradsparse.errors import (
    AllZeroInput,
    DegenerateInput,
    InvalidInput,
    NonConvergence,
    UnsupportedRatio,
)


class TestEstimateExponential:
    def test_constant(self):
        assert gm.estimate_exponential([1, 1, 1, 1]).scale == 1.0

    def test_mean(self):
        assert gm.estimate_exponential([0, 2]).scale == 1.0

    def test_all_zero(self):
        with pytest.raises(AllZeroInput):
            gm.estimate_exponential([0.0, 0.0, 0.0])

    def test_monte_carlo(self, rng):
        # 4 standard errors of the mean: 4 * 0.5 / sqrt(1e6) = 0.002
        beta = gm.estimate_exponential(rng.exponential(0.5, 10**6)).scale
        assert 0.498 <= beta <= 0.502

    def test_float32_widened(self):
        x = np.array([0.1, 0.2, 0.3], dtype=np.float32)
        assert gm.estimate_exponential(x).scale == pytest.approx(np.float64(x).mean(), rel=0, abs=0)

    def test_rejects_nan(self):
        with pytest.raises(InvalidInput):
            gm.estimate_exponential([1.0, np.nan])

    def test_rejects_empty(self):
        with pytest.raises(InvalidInput):
            gm.estimate_exponential([])


class TestEstimateGamma:
    def test_recovers_known_parameters(self, rng):
        p = gm.estimate_gamma(rng.gamma(1.0, 2.0, 10**6))
        assert 0.97 <= p.shape <= 1.03
        assert 1.94 <= p.scale <= 2.06

    def test_exponential_is_gamma_shape_one(self, rng):
        p = gm.estimate_gamma(rng.exponential(1.0, 10**6))
        assert abs(p.shape - 1.0) <= 0.03

    def test_closed_form_matches_direct_evaluation(self):
        x = np.array([0.5, 1.0, 2.0, 4.0])
        mu = x.mean()
        s = math.log(mu) - np.log(x).mean()
        shape = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
        p = gm.estimate_gamma(x)
        assert p.shape == pytest.approx(shape, rel=1e-14)
        assert p.scale == pytest.approx(mu / shape, rel=1e-14)

    def test_constant_vector_is_degenerate(self):
        with pytest.raises(DegenerateInput):
            gm.estimate_gamma(np.full(100, 0.3))

    def test_zeros_are_excluded(self, rng):
        x = rng.gamma(0.8, 1.0, 1000)
        padded = np.concatenate([x, np.zeros(400)])
        assert gm.estimate_gamma(padded) == gm.estimate_gamma(x)

    def test_majority_zero_is_degenerate(self, rng):
        x = np.concatenate([rng.gamma(0.8, 1.0, 100), np.zeros(101)])
        with pytest.raises(DegenerateInput):
            gm.estimate_gamma(x)

    def test_needs_two_positive(self):
        with pytest.raises(DegenerateInput):
            gm.estimate_gamma([3.0])


class TestEstimateGPD:
    def test_recovers_known_parameters(self, rng):
        x = stats.genpareto.rvs(0.2, scale=1.0, size=10**6, random_state=rng)
        p = gm.estimate_gpd(x, 0.0)
        assert 0.15 <= p.shape <= 0.25
        assert 0.95 <= p.scale <= 1.05
        assert not p.clamped

    def test_exponential_data_gives_zero_shape(self, rng):
        p = gm.estimate_gpd(rng.exponential(1.0, 10**6), 0.0)
        assert abs(p.shape) <= 0.02

    def test_location_shift(self, rng):
        x = rng.exponential(1.0, 10**5)
        assert gm.estimate_gpd(x + 3.0, 3.0).shape == pytest.approx(gm.estimate_gpd(x).shape, rel=1e-9)

    def test_zero_variance(self):
        with pytest.raises(DegenerateInput):
            gm.estimate_gpd([1.0, 1.0], 0.0)

    def test_clamps_low_shape(self):
        # near-constant data: mean^2/var is huge, shape far below -0.5
        p = gm.estimate_gpd([1.0, 1.01, 1.02])
        assert p.clamped
        assert p.shape == -0.5 + 1e-6

    def test_clamps_high_shape(self):
        # one spike among 1e6 zeros: mean^2/var ~ 1e-6, shape just under 0.5
        x = np.zeros(10**6)
        x[0] = 1.0
        p = gm.estimate_gpd(x)
        assert p.clamped
        assert p.shape == 0.5 - 1e-6

    def test_rejects_negative_location(self):
        with pytest.raises(InvalidInput):
            gm.estimate_gpd([1.0, 2.0], -1.0)


class TestThreshold:
    def test_exponential_closed_form(self):
        assert gm.threshold_from_params(gm.Exponential(1.0), 0.01) == pytest.approx(math.log(100), rel=1e-15)

    def test_exponential_against_empirical_quantile(self, rng):
        # quantile standard error sqrt(p(1-p)/n)/f(q) = 0.00995 for Exp(1) at 0.99
        q = np.quantile(rng.exponential(1.0, 10**6), 0.99)
        assert abs(q - gm.threshold_from_params(gm.Exponential(1.0), 0.01)) < 0.04

    def test_gpd_small_shape_limit(self):
        beta = 1.7
        eta_gpd = gm.threshold_from_params(gm.GeneralizedPareto(1e-8, beta, 0.0), 0.01)
        eta_exp = gm.threshold_from_params(gm.Exponential(beta), 0.01)
        assert abs(eta_gpd - eta_exp) < 1e-4 * beta

    @pytest.mark.parametrize("shape", [1e-6, -1e-6])
    def test_gpd_continuity_at_zero_shape(self, shape):
        eta0 = gm.threshold_from_params(gm.Exponential(1.0), 0.001)
        eta = gm.threshold_from_params(gm.GeneralizedPareto(shape, 1.0, 0.0), 0.001)
        # first-order term of the expansion: shape * log(1/delta)^2 / 2
        assert abs(eta - eta0) <= abs(shape) * math.log(1000) ** 2

    def test_gpd_formula(self):
        a, b, loc, d = 0.2, 1.3, 0.7, 0.01
        expected = (b / a) * (math.exp(-a * math.log(d)) - 1) + loc
        assert gm.threshold_from_params(gm.GeneralizedPareto(a, b, loc), d) == pytest.approx(expected, rel=1e-13)

    def test_gpd_matches_scipy_quantile(self):
        eta = gm.threshold_from_params(gm.GeneralizedPareto(0.2, 1.0, 0.5), 0.001)
        assert eta == pytest.approx(stats.genpareto.isf(0.001, 0.2, loc=0.5), rel=1e-12)

    def test_gamma_shape_one_reduces_to_exponential(self):
        assert gm.threshold_from_params(gm.Gamma(1.0, 1.0), 0.1) == pytest.approx(math.log(10), rel=1e-15)

    def test_gaussian_zero_mean(self):
        eta = gm.threshold_from_params(gm.Gaussian(0.0, 2.0), 0.05)
        assert eta == pytest.approx(2.0 * stats.norm.isf(0.025), rel=1e-12)

    def test_gaussian_nonzero_mean(self):
        mu, sd, d = 0.5, 1.0, 0.01
        eta = gm.threshold_from_params(gm.Gaussian(mu, sd), d)
        tail = stats.norm.sf(eta, mu, sd) + stats.norm.cdf(-eta, mu, sd)
        assert tail == pytest.approx(d, rel=1e-9)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
    def test_unsupported_ratio(self, delta):
        with pytest.raises(UnsupportedRatio):
            gm.threshold_from_params(gm.Exponential(1.0), delta)

    def test_gpd_threshold_not_below_location(self):
        assert gm.threshold_from_params(gm.GeneralizedPareto(-0.4, 1.0, 2.0), 0.9) >= 2.0

    @settings(max_examples=60, deadline=None)
    @given(
        d1=st.floats(1e-6, 0.99),
        d2=st.floats(1e-6, 0.99),
        family=st.sampled_from(["exp", "gamma", "gpd", "gauss"]),
    )
    def test_monotone_in_ratio(self, d1, d2, family):
        if abs(d1 - d2) < 1e-9:
            return
        lo, hi = min(d1, d2), max(d1, d2)
        params = {
            "exp": gm.Exponential(0.7),
            "gamma": gm.Gamma(1.1, 0.7),
            "gpd": gm.GeneralizedPareto(0.3, 0.7, 0.1),
            "gauss": gm.Gaussian(0.0, 0.7),
        }[family]
        assert gm.threshold_from_params(params, lo) > gm.threshold_from_params(params, hi)

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(1e-3, 1e3), family=st.sampled_from(["exponential", "gamma", "gpd", "gaussian"]))
    def test_scale_equivariance(self, c, family):
        x = np.abs(np.random.default_rng(7).laplace(0, 1, 2000)) + 1e-3
        base = gm.threshold_from_params(gm.fit(family, x), 0.01)
        scaled = gm.threshold_from_params(gm.fit(family, c * x), 0.01)
        assert scaled == pytest.approx(c * base, rel=1e-9)


class TestBinomialExceedance:
    """Exceedance counts above eta(delta) are Binomial(d, delta) under the true law."""

    d, draws, delta = 10**5, 200, 0.01

    def _check(self, sampler, eta, rng):
        counts = np.array([np.count_nonzero(sampler(rng) >= eta) for _ in range(self.draws)])
        tol = 4 * math.sqrt(self.d * self.delta * (1 - self.delta) / self.draws)
        assert abs(counts.mean() - self.d * self.delta) <= tol

    def test_exponential(self, rng):
        eta = gm.threshold_from_params(gm.Exponential(2.0), self.delta)
        self._check(lambda r: r.exponential(2.0, self.d), eta, rng)

    def test_gpd(self, rng):
        eta = gm.threshold_from_params(gm.GeneralizedPareto(0.2, 1.0, 0.0), self.delta)
        self._check(lambda r: stats.genpareto.rvs(0.2, size=self.d, random_state=r), eta, rng)

    def test_gaussian(self, rng):
        eta = gm.threshold_from_params(gm.Gaussian(0.0, 1.0), self.delta)
        self._check(lambda r: np.abs(r.standard_normal(self.d)), eta, rng)

    def test_gamma_exact(self, rng):
        eta = gm.gamma_threshold_exact_oracle(gm.Gamma(0.8, 1.0), self.delta)
        self._check(lambda r: r.gamma(0.8, 1.0, self.d), eta, rng)


def test_gamma_and_exponential_agree_on_exponential_data(rng):
    x = rng.exponential(1.3, 10**6)
    g = gm.estimate_gamma(x)
    assert abs(g.shape - 1.0) < 0.03
    eta_g = gm.threshold_from_params(g, 0.1)
    eta_e = gm.threshold_from_params(gm.estimate_exponential(x), 0.1)
    assert abs(eta_g - eta_e) / eta_e < 0.03


class TestGammaOracle:
    def test_shape_one(self):
        assert gm.gamma_threshold_exact_oracle(gm.Gamma(1.0, 1.0), 0.1) == pytest.approx(math.log(10), rel=1e-9)

    def test_scale_equivariance(self):
        assert gm.gamma_threshold_exact_oracle(gm.Gamma(1.0, 3.0), 0.001) == pytest.approx(3 * math.log(1000), rel=1e-9)

    def test_matches_scipy_inverse(self):
        exact = gm.gamma_threshold_exact_oracle(gm.Gamma(0.9, 1.0), 0.01)
        assert exact == pytest.approx(special.gammaincinv(0.9, 0.99), abs=1e-9)
        approx = gm.threshold_from_params(gm.Gamma(0.9, 1.0), 0.01)
        assert abs(approx - exact) / exact <= 0.15

    def test_bracket_failure(self, monkeypatch):
        monkeypatch.setattr(gm.special, "gammainc", lambda a, x: 0.5)
        with pytest.raises(NonConvergence):
            gm.gamma_threshold_exact_oracle(gm.Gamma(1.0, 1.0), 0.01)


class TestCompressibility:
    def test_power_law_recovered(self):
        g = np.arange(1, 10**5 + 1, dtype=np.float64) ** -0.7
        r = gm.compressibility_check(g)
        assert 0.65 <= r.decay_exponent <= 0.75
        assert r.is_compressible
        assert r.n_fit == 10**4

    def test_power_law_shuffled_and_signed(self, rng):
        g = np.arange(1, 10**5 + 1, dtype=np.float64) ** -0.7
        g = rng.permutation(g) * rng.choice([-1.0, 1.0], g.size)
        assert gm.compressibility_check(g).decay_exponent == pytest.approx(0.7, abs=1e-9)

    def test_constant(self):
        r = gm.compressibility_check(np.full(1000, 2.5))
        assert abs(r.decay_exponent) < 1e-9
        assert not r.is_compressible

    def test_all_zero(self):
        r = gm.compressibility_check(np.zeros(100))
        assert r.degenerate and r.is_compressible and math.isinf(r.decay_exponent)

    def test_too_short(self):
        with pytest.raises(InvalidInput):
            gm.compressibility_check(np.ones(9))


class TestErrorCurve:
    def test_drop_smallest(self):
        c = gm.sparsification_error_curve([3, -2, 1], [2])
        assert c.errors[0] == 1.0

    def test_ties(self):
        c = gm.sparsification_error_curve([1, 1, 1, 1], [2])
        assert c.errors[0] == pytest.approx(math.sqrt(2), rel=1e-15)

    def test_full_k_is_zero(self):
        c = gm.sparsification_error_curve([1.0, -4.0, 2.0], [1, 2, 3])
        assert c.errors[-1] == 0.0
        assert np.all(np.diff(c.errors) <= 0)

    def test_against_sort_oracle(self, rng):
        g = rng.standard_normal(10**4)
        ks = np.sort(rng.choice(np.arange(1, g.size + 1), 20, replace=False))
        curve = gm.sparsification_error_curve(g, ks)
        order = np.argsort(-np.abs(g), kind="stable")
        for k, err in zip(ks, curve.errors):
            kept = np.zeros_like(g)
            kept[order[:k]] = g[order[:k]]
            assert err == pytest.approx(np.linalg.norm(g - kept), rel=1e-12)

    def test_bound_constant(self):
        g = np.arange(1, 1001, dtype=np.float64) ** -1.0
        curve = gm.sparsification_error_curve(g, [1, 10, 100])
        c2 = curve.bound_constant(1.0)
        assert np.all(curve.errors <= c2 * curve.ks ** -0.5 * (1 + 1e-12))

    def test_rejects_unsorted(self):
        with pytest.raises(InvalidInput):
            gm.sparsification_error_curve([1.0, 2.0, 3.0], [2, 1])
