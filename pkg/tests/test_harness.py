"""Factorial study orchestration, ANOVA decomposition, and summary tables."""

import numpy as np
import pytest

from rerand.design import build_criterion
from rerand.dgp import DgpConfig, generate_covariates, generate_outcomes
from rerand.errors import BaselineError, GridBalanceError
from rerand.harness import (
    METHODS,
    FactorGrid,
    ResultRecord,
    anova,
    enumeration_check,
    evaluate_methods,
    grid_hash,
    main_effects_coverage,
    main_effects_length,
    run_grid,
    summary_dict,
    write_results_csv,
)
from rerand.streams import RngStream


def tiny_grid(**overrides):
    base = dict(
        n=20,
        K=2,
        cov_dist="normal01",
        dgp="DGP1",
        r0_levels=(0.2,),
        lambda_levels=("zero",),
        c_levels=(0.0, 0.1),
        datasets_per_cell=2,
        experiments_per_dataset=4,
        p_accept=0.2,
        gibbs_draws=200,
        gibbs_burn_in=50,
        q_draws=2000,
    )
    base.update(overrides)
    return FactorGrid(**base)


def naive_sums_of_squares(t):
    """Independent oracle: the decomposition computed with explicit loops."""
    M, E, F, G, D, R = t.shape
    grand = t.mean()
    tm = [t[m].mean() for m in range(M)]
    te = [t[:, e].mean() for e in range(E)]
    tf = [t[:, :, f].mean() for f in range(F)]
    tg = [t[:, :, :, g].mean() for g in range(G)]
    ss = dict.fromkeys(
        ["method", "e", "f", "g", "interaction", "data", "experiment", "total"], 0.0
    )
    for m in range(M):
        ss["method"] += E * F * G * D * R * (tm[m] - grand) ** 2
    for e in range(E):
        ss["e"] += M * F * G * D * R * (te[e] - grand) ** 2
    for f in range(F):
        ss["f"] += M * E * G * D * R * (tf[f] - grand) ** 2
    for g in range(G):
        ss["g"] += M * E * F * D * R * (tg[g] - grand) ** 2
    for m in range(M):
        for e in range(E):
            for f in range(F):
                for g in range(G):
                    cell = t[m, e, f, g].mean()
                    dev = cell - tm[m] - te[e] - tf[f] - tg[g] + 3 * grand
                    ss["interaction"] += D * R * dev**2
                    for d in range(D):
                        dmean = t[m, e, f, g, d].mean()
                        ss["data"] += R * (dmean - cell) ** 2
                        for r in range(R):
                            ss["experiment"] += (t[m, e, f, g, d, r] - dmean) ** 2
                            ss["total"] += (t[m, e, f, g, d, r] - grand) ** 2
    return ss


@pytest.fixture(scope="module")
def small_run():
    grid = tiny_grid()
    return run_grid(RngStream(123), grid, workers=1)


class TestRunGrid:
    def test_record_count(self, small_run):
        records = list(small_run.records())
        M, E, F, G, D, R = small_run.grid.shape
        assert len(records) == M * E * F * G * D * R
        assert M == 10

    def test_worker_count_does_not_change_results(self, tmp_path):
        grid = tiny_grid(datasets_per_cell=1, experiments_per_dataset=3)
        res1 = run_grid(RngStream(7), grid, workers=1)
        res2 = run_grid(RngStream(7), grid, workers=2)
        assert np.array_equal(res1.lengths, res2.lengths)
        assert np.array_equal(res1.covered, res2.covered)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_results_csv(p1, res1)
        write_results_csv(p2, res2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_lengths_positive_and_finite(self, small_run):
        assert np.all(np.isfinite(small_run.lengths))
        assert np.all(small_run.lengths >= 0)

    def test_method_subset(self):
        grid = tiny_grid(methods=("Neyman", "IntE", "LDR"), datasets_per_cell=1)
        res = run_grid(RngStream(9), grid, workers=1)
        assert res.lengths.shape[0] == 3

    def test_grid_hash_stable_and_sensitive(self):
        g1, g2 = tiny_grid(), tiny_grid()
        assert grid_hash(g1) == grid_hash(g2)
        assert grid_hash(g1) != grid_hash(tiny_grid(experiments_per_dataset=5))

    def test_csv_layout(self, small_run, tmp_path):
        path = tmp_path / "results.csv"
        write_results_csv(path, small_run)
        lines = path.read_text().splitlines()
        assert lines[0].startswith(f"# seed={small_run.seed} config=")
        assert lines[1] == "m,e,f,g,d,r,method,length,covered"
        first = lines[2].split(",")
        assert first[:6] == ["0", "0", "0", "0", "0", "0"]
        assert first[6] == "Neyman"
        assert float(first[7]) == small_run.lengths[0, 0, 0, 0, 0, 0]  # plain decimal
        assert first[8] in ("0", "1")
        assert len(lines) == 2 + np.prod(small_run.grid.shape)

    def test_summary_keys(self, small_run):
        summary = summary_dict(small_run)
        assert set(summary) == {
            "anova_length",
            "anova_coverage",
            "main_effects_length",
            "main_effects_coverage",
            "grid",
            "seed",
            "config_hash",
        }
        assert summary["seed"] == 123


class TestAnova:
    def test_matches_naive_oracle_on_fuzz(self):
        gen = RngStream(31).generator
        t = gen.standard_normal((3, 2, 2, 2, 2, 3))
        table = anova(t, "length")
        oracle = naive_sums_of_squares(t)
        for name, value in table.components().items():
            assert value == pytest.approx(oracle[name], rel=1e-10, abs=1e-12)
        assert table.ss_total == pytest.approx(oracle["total"], rel=1e-10)

    def test_hand_built_small_grid(self):
        # M=2, E=F=G=1, D=2, R=2 with values chosen for easy hand checking
        t = np.array(
            [
                [[[[[1.0, 3.0], [5.0, 7.0]]]]],
                [[[[[2.0, 2.0], [4.0, 8.0]]]]],
            ]
        )
        table = anova(t, "length")
        # grand mean 4; method means 4 and 4 -> ss_method = 0
        assert table.ss_method == pytest.approx(0.0, abs=1e-12)
        # dataset means: (2, 6) and (2, 6); cell means 4, 4
        assert table.ss_data == pytest.approx(2 * (4.0 + 4.0 + 4.0 + 4.0), abs=1e-12)
        # within-dataset deviations: (1,1),(1,1) and (0,0),(2,2)
        assert table.ss_experiment == pytest.approx(4.0 + 8.0, abs=1e-12)
        assert table.ss_total == pytest.approx(
            sum(table.components().values()), rel=1e-12
        )
        oracle = naive_sums_of_squares(t)
        for name, value in table.components().items():
            assert value == pytest.approx(oracle[name], abs=1e-12)

    def test_decomposition_identity(self, small_run):
        for metric in ("length", "coverage"):
            table = anova(small_run, metric)
            assert sum(table.components().values()) == pytest.approx(
                table.ss_total, rel=1e-8
            )
            assert sum(table.percentages.values()) == pytest.approx(100.0, abs=1e-6)

    def test_degenerate_all_equal(self):
        t = np.full((2, 1, 1, 1, 2, 2), 5.0)
        table = anova(t, "length")
        assert table.degenerate
        assert table.ss_total == 0.0
        assert all(v == 0.0 for v in table.percentages.values())

    def test_records_round_trip(self, small_run):
        records = list(small_run.records())
        table_from_records = anova(records, "length")
        table_from_dense = anova(small_run, "length")
        assert table_from_records.ss_total == pytest.approx(
            table_from_dense.ss_total, rel=1e-12
        )

    def test_incomplete_records_rejected(self, small_run):
        records = list(small_run.records())[:-1]
        with pytest.raises(GridBalanceError):
            anova(records, "length")

    def test_duplicate_records_rejected(self):
        rec = ResultRecord(0, 0, 0, 0, 0, 0, 1.0, True)
        with pytest.raises(GridBalanceError):
            anova([rec, rec], "length")

    def test_unknown_metric(self, small_run):
        with pytest.raises(ValueError):
            anova(small_run, "width")


class TestMainEffects:
    def test_neyman_baseline_is_100(self, small_run):
        table = main_effects_length(small_run)
        assert table["Neyman"] == pytest.approx(100.0, abs=1e-12)
        assert set(table) == set(METHODS)

    def test_identical_lengths_all_100(self):
        lengths = np.full((3, 1, 1, 1, 2, 2), 2.5)
        covered = np.ones((3, 1, 1, 1, 2, 2), dtype=bool)
        grid = tiny_grid(
            methods=("Neyman", "IntE", "LDR"),
            r0_levels=(0.2,),
            c_levels=(0.0,),
            datasets_per_cell=2,
            experiments_per_dataset=2,
        )
        from rerand.harness import ResultSet

        res = ResultSet(grid=grid, seed=0, lengths=lengths, covered=covered)
        table = main_effects_length(res)
        assert all(v == pytest.approx(100.0) for v in table.values())

    def test_exact_nominal_coverage_reports_zero(self):
        covered = np.zeros((1, 1, 1, 1, 1, 100), dtype=bool)
        covered[..., :95] = True
        lengths = np.ones_like(covered, dtype=float)
        grid = tiny_grid(
            methods=("Neyman",),
            r0_levels=(0.2,),
            c_levels=(0.0,),
            datasets_per_cell=1,
            experiments_per_dataset=100,
        )
        from rerand.harness import ResultSet

        res = ResultSet(grid=grid, seed=0, lengths=lengths, covered=covered)
        assert main_effects_coverage(res)["Neyman"] == pytest.approx(0.0, abs=1e-12)

    def test_missing_baseline(self):
        grid = tiny_grid(methods=("IntE", "LDR"), datasets_per_cell=1)
        res = run_grid(RngStream(10), grid, workers=1)
        with pytest.raises(BaselineError):
            main_effects_length(res)

    def test_reported_mc_standard_error_magnitude(self):
        # at 20 datasets x 2000 experiments the coverage main-effect SE is
        # 100 * sqrt(0.95 * 0.05 / 40000) = 0.11 percentage points
        se = 100.0 * np.sqrt(0.95 * 0.05 / (20 * 2000))
        assert se == pytest.approx(0.11, abs=0.005)


class TestEnumerationCheck:
    def test_unbiasedness_gap_vanishes(self):
        cfg = DgpConfig("DGP1", 8, 2, "normal01", 0.5, "scaled", 0.1)
        root = RngStream(77)
        X = generate_covariates(root.derive(0), cfg)
        outcomes = generate_outcomes(root.derive(1), cfg, X)
        crit = build_criterion(X, 4, 0.3)
        info = enumeration_check(X, outcomes, crit)
        assert info["set_size"] > 0
        assert info["total_allocations"] == 70
        assert abs(info["gap"]) < 1e-12

    def test_empty_set_reported(self):
        from rerand.design import BalanceCriterion

        X = np.array([1.0, 2.0, 3.0, 5.0])
        base = build_criterion(X, 2, 0.5)
        crit = BalanceCriterion(base.sxx_factor, 1e-9, 2, 2)
        info = enumeration_check(
            X,
            generate_outcomes(
                RngStream(5).derive(1),
                DgpConfig("DGP1", 4, 1, "normal01", 0.5, "zero", 0.0),
                X[:, None],
            ),
            crit,
        )
        assert info["set_size"] == 0
        assert info["mean_estimate"] is None


class TestEvaluateMethods:
    def test_all_ten_methods_round_trip(self):
        cfg = DgpConfig("DGP1", 30, 2, "normal01", 0.5, "scaled", 0.1)
        root = RngStream(55)
        X = generate_covariates(root.derive(0), cfg)
        outcomes = generate_outcomes(root.derive(1), cfg, X)
        w = np.zeros(30, dtype=np.int8)
        w[root.derive(2).generator.choice(30, 15, replace=False)] = 1
        from rerand.estimators import ObservedData

        data = ObservedData(X, w, np.where(w == 1, outcomes.y1, outcomes.y0))
        crit = build_criterion(X, 15, 0.01)
        out = evaluate_methods(
            data, crit, root.derive(3), q_draws=5000, gibbs_draws=300, gibbs_burn_in=50
        )
        assert tuple(out) == METHODS
        for est in out.values():
            assert est.lower <= est.upper
        assert out["LDR"].point == pytest.approx(out["Neyman"].point, abs=1e-12)
