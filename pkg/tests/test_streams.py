"""Stream derivation and sampling primitives against independent oracles."""

import mpmath
import numpy as np
import pytest
from scipy import stats

from rerand.streams import (
    RngStream,
    TruncatedChiSqSpec,
    chisq_cdf,
    chisq_quantile,
    derive_stream,
    sample_beta_half,
    sample_inverse_gamma,
    sample_standard,
    sample_truncated_chisq,
)


def mc_bound(draws, k=3.0):
    """k Monte Carlo standard errors of the sample mean."""
    return k * draws.std(ddof=1) / np.sqrt(len(draws))


class TestStreamDerivation:
    def test_same_lineage_identical_sequences(self):
        s = RngStream(123)
        a = derive_stream(s, 7)
        b = derive_stream(s, 7)
        assert np.array_equal(a.generator.random(100), b.generator.random(100))

    def test_distinct_elements_differ(self):
        s = RngStream(123)
        a = derive_stream(s, 1)
        b = derive_stream(s, 2)
        assert a.generator.random() != b.generator.random()

    def test_path_order_matters(self):
        s = RngStream(123)
        ab = s.derive(1).derive(2)
        ba = s.derive(2).derive(1)
        assert not np.array_equal(ab.generator.random(8), ba.generator.random(8))

    def test_parent_unmodified_by_derivation(self):
        s = RngStream(123)
        before = RngStream(123).generator.random(5)
        s.derive(1)
        s.derive(2)
        assert np.array_equal(s.generator.random(5), before)

    def test_pipeline_reproducibility(self):
        def pipeline(seed):
            root = RngStream(seed)
            x = sample_standard(root.derive(1), "normal01", size=10)
            y = sample_truncated_chisq(root.derive(2), TruncatedChiSqSpec(3, 2.0), size=10)
            return np.concatenate([x, y])

        assert np.array_equal(pipeline(99), pipeline(99))

    def test_path_elements_validated(self):
        with pytest.raises(ValueError):
            RngStream(1).derive(-3)
        with pytest.raises(ValueError):
            RngStream(2**64)


class TestChisqQuantile:
    def test_closed_form_dof2(self):
        # dof=2 is exponential with mean 2: quantile(p) = -2 log(1-p)
        assert chisq_quantile(2, 0.95) == pytest.approx(-2.0 * np.log(0.05), abs=1e-10)
        assert chisq_quantile(2, 0.5) == pytest.approx(-2.0 * np.log(0.5), abs=1e-10)
        assert chisq_quantile(2, 0.95) == pytest.approx(5.991464547, abs=1e-8)

    def test_dof3_lower_tail_against_mpmath_bisection(self):
        # independent oracle: bisection on the mpmath regularized incomplete gamma
        def cdf(x):
            return float(mpmath.gammainc(1.5, 0, x / 2, regularized=True))

        lo, hi = 0.0, 5.0
        for _ in range(200):
            mid = (lo + hi) / 2
            if cdf(mid) < 0.01:
                lo = mid
            else:
                hi = mid
        oracle = (lo + hi) / 2
        assert chisq_quantile(3, 0.01) == pytest.approx(oracle, abs=1e-10)
        assert chisq_quantile(3, 0.01) == pytest.approx(0.1148, abs=5e-5)

    @pytest.mark.parametrize("dof", [1, 2, 3, 10, 50])
    @pytest.mark.parametrize("p", [1e-6, 0.01, 0.5, 0.975, 1 - 1e-9])
    def test_cdf_roundtrip(self, dof, p):
        x = chisq_quantile(dof, p)
        assert abs(float(chisq_cdf(dof, x)) - p) < 1e-10

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.7])
    def test_domain_errors(self, p):
        with pytest.raises(ValueError):
            chisq_quantile(3, p)


class TestTruncatedChisq:
    def test_every_draw_below_bound(self):
        spec = TruncatedChiSqSpec(dof=3, bound=0.5)
        draws = sample_truncated_chisq(RngStream(1).derive(1), spec, size=20_000)
        assert np.all(draws <= spec.bound)
        assert np.all(draws > 0)

    def test_conditional_mean_dof2(self):
        # dof=2, a=2: E[X | X <= 2] = 2 - 2 e^{-1} / (1 - e^{-1})
        spec = TruncatedChiSqSpec(dof=2, bound=2.0)
        draws = sample_truncated_chisq(RngStream(2).derive(1), spec, size=1_000_000)
        expected = 2.0 - 2.0 * np.exp(-1.0) / (1.0 - np.exp(-1.0))
        assert abs(draws.mean() - expected) < mc_bound(draws)

    def test_untruncated_limit_mean(self):
        spec = TruncatedChiSqSpec(dof=4, bound=np.inf)
        draws = sample_truncated_chisq(RngStream(3).derive(1), spec, size=1_000_000)
        assert abs(draws.mean() - 4.0) < mc_bound(draws)

    @pytest.mark.parametrize("dof", [3, 10])
    def test_ks_against_analytic_truncated_cdf(self, dof):
        bound = chisq_quantile(dof, 0.01)
        spec = TruncatedChiSqSpec(dof=dof, bound=bound)
        draws = sample_truncated_chisq(RngStream(40 + dof).derive(1), spec, size=100_000)
        f_bound = float(chisq_cdf(dof, bound))

        def trunc_cdf(x):
            return np.clip(chisq_cdf(dof, np.minimum(x, bound)) / f_bound, 0.0, 1.0)

        result = stats.kstest(draws, trunc_cdf)
        assert result.pvalue > 0.01

    def test_lower_tail_mass_of_bound(self):
        # the 0.01-quantile bound cuts off 1% of the untruncated law
        bound = chisq_quantile(5, 0.01)
        gen = RngStream(7).derive(1).generator
        draws = gen.chisquare(5, size=1_000_000)
        frac = (draws <= bound).mean()
        se = np.sqrt(0.01 * 0.99 / 1_000_000)
        assert abs(frac - 0.01) < 3 * se

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            TruncatedChiSqSpec(dof=0, bound=1.0)
        with pytest.raises(ValueError):
            TruncatedChiSqSpec(dof=3, bound=0.0)


class TestBetaHalf:
    def test_k1_point_mass_at_one(self):
        s = RngStream(11).derive(1)
        assert sample_beta_half(s, 1) == 1.0
        assert np.all(sample_beta_half(s, 1, size=1000) == 1.0)

    def test_k10_mean(self):
        # Beta(1/2, 9/2) has mean (1/2) / 5 = 0.1
        draws = sample_beta_half(RngStream(12).derive(1), 10, size=1_000_000)
        assert abs(draws.mean() - 0.1) < mc_bound(draws)

    def test_support(self):
        draws = sample_beta_half(RngStream(13).derive(1), 4, size=50_000)
        assert np.all((draws >= 0.0) & (draws <= 1.0))


class TestInverseGamma:
    def test_mean_shape3_scale4(self):
        # mean = scale / (shape - 1) = 2
        draws = sample_inverse_gamma(RngStream(21).derive(1), 3.0, 4.0, size=1_000_000)
        assert abs(draws.mean() - 2.0) < mc_bound(draws)

    def test_support_positive(self):
        draws = sample_inverse_gamma(RngStream(22).derive(1), 1.0, 0.01, size=50_000)
        assert np.all(draws > 0)

    def test_reciprocal_is_gamma(self):
        # change of variables: 1/X ~ Gamma(shape, rate=scale)
        shape, scale = 2.5, 1.7
        draws = sample_inverse_gamma(RngStream(23).derive(1), shape, scale, size=100_000)
        result = stats.kstest(1.0 / draws, stats.gamma(a=shape, scale=1.0 / scale).cdf)
        assert result.pvalue > 0.01

    def test_invalid_parameters(self):
        s = RngStream(24)
        with pytest.raises(ValueError):
            sample_inverse_gamma(s, 0.0, 1.0)
        with pytest.raises(ValueError):
            sample_inverse_gamma(s, 1.0, -1.0)


class TestSampleStandard:
    def test_rademacher_support_and_mean(self):
        draws = sample_standard(RngStream(31).derive(1), "rademacher", size=1_000_000)
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs(draws.mean()) < mc_bound(draws)

    def test_exp1_centered_moments(self):
        draws = sample_standard(RngStream(32).derive(1), "exp1_centered", size=1_000_000)
        n = len(draws)
        assert abs(draws.mean()) < mc_bound(draws)
        # SE of the sample variance from the fourth central moment
        m4 = ((draws - draws.mean()) ** 4).mean()
        se_var = np.sqrt((m4 - draws.var() ** 2) / n)
        assert abs(draws.var(ddof=1) - 1.0) < 3 * se_var

    def test_exp1_positive_mean_one(self):
        draws = sample_standard(RngStream(33).derive(1), "exp1", size=1_000_000)
        assert np.all(draws > 0)
        assert abs(draws.mean() - 1.0) < mc_bound(draws)

    def test_normal01_skewness_kurtosis(self):
        draws = sample_standard(RngStream(34).derive(1), "normal01", size=1_000_000)
        n = len(draws)
        z = (draws - draws.mean()) / draws.std()
        skew = (z**3).mean()
        kurt = (z**4).mean()
        assert abs(skew) < 3 * np.sqrt(6.0 / n)
        assert abs(kurt - 3.0) < 3 * np.sqrt(24.0 / n)

    def test_scalar_draws(self):
        s = RngStream(35).derive(1)
        assert sample_standard(s, "rademacher") in (-1.0, 1.0)
        assert isinstance(sample_standard(s, "normal01"), float)

    def test_unknown_distribution(self):
        with pytest.raises(ValueError):
            sample_standard(RngStream(36), "cauchy")
