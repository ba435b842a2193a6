"""Balance criterion, rejection sampler, and enumeration oracle."""

import numpy as np
import pytest
from scipy import stats

from rerand.design import (
    BalanceCriterion,
    build_criterion,
    covariate_mean_difference,
    default_max_tries,
    draw_accepted_allocation,
    enumerate_acceptance_set,
    factor_covariance,
    finite_population_covariance,
    mahalanobis,
)
from rerand.errors import AcceptanceFailureError, EnumerationSizeError, SingularCovariatesError
from rerand.streams import RngStream, chisq_quantile


def brute_force_distance(X, w):
    """Direct quadratic form with an explicit matrix inverse."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 1:
        X = X.T
    n = X.shape[0]
    S = np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1])
    d = X[np.asarray(w) == 1].mean(axis=0) - X[np.asarray(w) == 0].mean(axis=0)
    return n / 4.0 * float(d @ np.linalg.inv(S) @ d)


class TestFinitePopulationCovariance:
    def test_single_column_hand_value(self):
        S = finite_population_covariance(np.array([1.0, 2.0, 3.0, 4.0]))
        assert S.shape == (1, 1)
        assert S[0, 0] == pytest.approx(5.0 / 3.0, abs=1e-12)

    def test_matches_numpy_cov(self):
        X = RngStream(1).generator.standard_normal((20, 4))
        assert np.allclose(finite_population_covariance(X), np.cov(X, rowvar=False, ddof=1))

    def test_constant_column_singularity_names_column(self):
        X = np.column_stack([np.arange(6.0), np.full(6, 3.0)])
        with pytest.raises(SingularCovariatesError) as err:
            build_criterion(X, 3, 0.1)
        assert err.value.columns == [1]

    def test_duplicated_column_singularity(self):
        x = np.arange(8.0)
        X = np.column_stack([x, 2.0 * x])
        with pytest.raises(SingularCovariatesError) as err:
            build_criterion(X, 4, 0.1)
        assert len(err.value.columns) >= 1
        assert set(err.value.columns) <= {0, 1}

    def test_factor_reconstructs(self):
        X = RngStream(2).generator.standard_normal((30, 3))
        S = finite_population_covariance(X)
        L = factor_covariance(S, X)
        assert np.allclose(L @ L.T, S)


class TestMeanDifference:
    def test_equal_group_means_zero(self):
        d = covariate_mean_difference(np.array([1.0, 2.0, 2.0, 1.0]), [1, 1, 0, 0])
        assert d == pytest.approx(0.0)

    def test_hand_value(self):
        d = covariate_mean_difference(np.array([1.0, 2.0, 3.0, 4.0]), [1, 1, 0, 0])
        assert d[0] == pytest.approx(-2.0, abs=1e-14)

    def test_complement_negates(self):
        X = RngStream(3).generator.standard_normal((10, 2))
        w = np.array([1, 0, 1, 0, 1, 0, 1, 0, 1, 0], dtype=np.int8)
        assert np.allclose(
            covariate_mean_difference(X, w), -covariate_mean_difference(X, 1 - w)
        )


class TestMahalanobis:
    def test_zero_for_balanced_means(self):
        X = np.array([1.0, 2.0, 2.0, 1.0])
        crit = build_criterion(X, 2, 0.5)
        assert mahalanobis(X, [1, 1, 0, 0], crit) == pytest.approx(0.0, abs=1e-14)

    def test_hand_value(self):
        X = np.array([1.0, 2.0, 3.0, 4.0])
        crit = build_criterion(X, 2, 0.5)
        # (4/4) * (-2)^2 / (5/3) = 2.4
        assert mahalanobis(X, [1, 1, 0, 0], crit) == pytest.approx(2.4, abs=1e-12)

    def test_matches_brute_force(self):
        gen = RngStream(4).generator
        X = gen.standard_normal((12, 3))
        crit = build_criterion(X, 6, 0.5)
        for _ in range(10):
            w = np.zeros(12, dtype=np.int8)
            w[gen.choice(12, 6, replace=False)] = 1
            assert mahalanobis(X, w, crit) == pytest.approx(
                brute_force_distance(X, w), rel=1e-10
            )

    def test_affine_invariance(self):
        gen = RngStream(5).generator
        X = gen.standard_normal((8, 2))
        A = gen.standard_normal((2, 2)) + 2.0 * np.eye(2)
        b = gen.standard_normal(2)
        X2 = X @ A.T + b
        crit1 = build_criterion(X, 4, 0.5)
        crit2 = build_criterion(X2, 4, 0.5)
        for _ in range(10):
            w = np.zeros(8, dtype=np.int8)
            w[gen.choice(8, 4, replace=False)] = 1
            assert mahalanobis(X, w, crit1) == pytest.approx(
                mahalanobis(X2, w, crit2), rel=1e-9
            )

    def test_mirror_symmetry(self):
        gen = RngStream(6).generator
        X = gen.standard_normal((10, 2))
        crit = build_criterion(X, 5, 0.5)
        for _ in range(10):
            w = np.zeros(10, dtype=np.int8)
            w[gen.choice(10, 5, replace=False)] = 1
            assert mahalanobis(X, w, crit) == pytest.approx(
                mahalanobis(X, 1 - w, crit), rel=1e-12
            )


class TestBuildCriterion:
    def test_thresholds_match_quantiles(self):
        gen = RngStream(7).generator
        X3 = gen.standard_normal((20, 3))
        assert build_criterion(X3, 10, 0.01).threshold == pytest.approx(0.1148, abs=5e-5)
        X10 = gen.standard_normal((30, 10))
        assert build_criterion(X10, 15, 0.01).threshold == pytest.approx(2.5582, abs=5e-5)

    def test_near_one_accepts_everything(self):
        gen = RngStream(8).generator
        X = gen.standard_normal((12, 2))
        crit = build_criterion(X, 6, 0.999999)
        accepted = enumerate_acceptance_set(X, crit)
        assert accepted.shape[0] == 924  # C(12, 6)

    def test_invalid_p(self):
        X = RngStream(9).generator.standard_normal((10, 2))
        for p in (0.0, 1.0, -1.0):
            with pytest.raises(ValueError):
                build_criterion(X, 5, p)


class TestDrawAcceptedAllocation:
    def test_accepted_allocation_satisfies_criterion(self):
        gen_stream = RngStream(10)
        X = gen_stream.generator.standard_normal((20, 3))
        crit = build_criterion(X, 10, 0.2)
        stream = gen_stream.derive(1)
        for _ in range(20):
            w, tries = draw_accepted_allocation(stream, X, crit, default_max_tries(0.2))
            assert w.sum() == 10
            assert mahalanobis(X, w, crit) <= crit.threshold
            assert tries >= 1

    def test_impossible_threshold_fails_with_best_distance(self):
        X = np.array([1.0, 2.0, 3.0, 5.0])
        base = build_criterion(X, 2, 0.5)
        crit = BalanceCriterion(base.sxx_factor, 1e-9, 2, 2)
        with pytest.raises(AcceptanceFailureError) as err:
            draw_accepted_allocation(RngStream(11).derive(1), X, crit, max_tries=1)
        assert err.value.tries == 1
        # smallest achievable distance for this covariate vector is 3/35
        assert err.value.best_distance >= 3.0 / 35.0 - 1e-12

    def test_acceptance_rate_matches_enumeration_mass(self):
        stream = RngStream(12)
        X = stream.generator.standard_normal((8, 1))
        crit = build_criterion(X, 4, 0.3)
        accepted = enumerate_acceptance_set(X, crit)
        target = accepted.shape[0] / 70.0
        trials = 20_000
        hits = 0
        draw_stream = stream.derive(1)
        for _ in range(trials):
            try:
                draw_accepted_allocation(draw_stream, X, crit, max_tries=1)
                hits += 1
            except AcceptanceFailureError:
                pass
        se = np.sqrt(target * (1.0 - target) / trials)
        assert abs(hits / trials - target) < 3 * se

    def test_uniform_over_acceptance_set(self):
        # accepted draws should be uniform over the enumerated set
        stream = RngStream(13)
        X = stream.generator.standard_normal((8, 1))
        crit = build_criterion(X, 4, 0.5)
        accepted = enumerate_acceptance_set(X, crit)
        index = {bytes(row) : i for i, row in enumerate(np.asarray(accepted, dtype=np.int8))}
        counts = np.zeros(len(index))
        draws = 100_000
        draw_stream = stream.derive(1)
        for _ in range(draws):
            w, _ = draw_accepted_allocation(draw_stream, X, crit, 10_000, batch=8)
            counts[index[bytes(w)]] += 1
        expected = draws / len(index)
        chi2 = ((counts - expected) ** 2 / expected).sum()
        assert 1.0 - stats.chi2.cdf(chi2, df=len(index) - 1) > 0.01

    def test_deterministic_given_stream(self):
        X = RngStream(14).generator.standard_normal((16, 2))
        crit = build_criterion(X, 8, 0.1)
        w1, t1 = draw_accepted_allocation(RngStream(14).derive(5), X, crit, 10_000)
        w2, t2 = draw_accepted_allocation(RngStream(14).derive(5), X, crit, 10_000)
        assert np.array_equal(w1, w2)
        assert t1 == t2


class TestEnumerateAcceptanceSet:
    def test_infinite_threshold_gives_all(self):
        X = np.array([1.0, 2.0, 3.0, 4.0])
        base = build_criterion(X, 2, 0.5)
        crit = BalanceCriterion(base.sxx_factor, np.inf, 2, 2)
        assert enumerate_acceptance_set(X, crit).shape == (6, 4)

    def test_below_minimum_gives_empty(self):
        X = np.array([1.0, 2.0, 3.0, 5.0])
        base = build_criterion(X, 2, 0.5)
        crit = BalanceCriterion(base.sxx_factor, 1e-9, 2, 2)
        assert enumerate_acceptance_set(X, crit).shape[0] == 0

    def test_hand_enumeration_n4(self):
        # distances for x = (1,2,3,4), pairs treated: {0,1}: 2.4, {0,2}: 0.6,
        # {0,3}: 0, {1,2}: 0, {1,3}: 0.6, {2,3}: 2.4; threshold 1.0 keeps four
        X = np.array([1.0, 2.0, 3.0, 4.0])
        base = build_criterion(X, 2, 0.5)
        crit = BalanceCriterion(base.sxx_factor, 1.0, 2, 2)
        accepted = enumerate_acceptance_set(X, crit)
        expected = np.array(
            [
                [0, 1, 0, 1],
                [0, 1, 1, 0],
                [1, 0, 0, 1],
                [1, 0, 1, 0],
            ],
            dtype=np.int8,
        )
        assert np.array_equal(accepted, expected)

    def test_lexicographic_order(self):
        X = RngStream(15).generator.standard_normal((8, 2))
        crit = build_criterion(X, 4, 0.8)
        accepted = enumerate_acceptance_set(X, crit)
        rows = [tuple(row) for row in accepted]
        assert rows == sorted(rows)

    def test_combinatorial_guard(self):
        X = RngStream(16).generator.standard_normal((40, 1))
        crit = build_criterion(X, 20, 0.5)
        with pytest.raises(EnumerationSizeError):
            enumerate_acceptance_set(X, crit)

    def test_closed_under_complement(self):
        X = RngStream(17).generator.standard_normal((8, 2))
        crit = build_criterion(X, 4, 0.3)
        accepted = enumerate_acceptance_set(X, crit)
        rows = {bytes(row) for row in accepted}
        for row in accepted:
            assert bytes((1 - row).astype(np.int8)) in rows


class TestUnbiasednessOverAcceptanceSet:
    def test_mean_estimate_equals_sate(self):
        gen = RngStream(18).generator
        X = gen.standard_normal((8, 2))
        y0 = gen.standard_normal(8)
        y1 = y0 + 1.5 + gen.standard_normal(8)
        sate = np.mean(y1 - y0)
        crit = build_criterion(X, 4, 0.3)
        accepted = enumerate_acceptance_set(X, crit).astype(float)
        estimates = accepted @ y1 / 4.0 - (1.0 - accepted) @ y0 / 4.0
        assert estimates.mean() == pytest.approx(sate, abs=1e-12)
