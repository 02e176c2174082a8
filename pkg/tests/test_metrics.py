"""
Unit tests for rank statistics, cross-sectional correlation and OLS
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from alphadoc.dsl import AlphaDef, parse_alpha
from alphadoc.errors import (
    ConfigError,
    DegenerateColumnError,
    InsufficientObservationsError,
    NoUsableDatesError,
    NonFiniteInputError,
    SingularDesignError,
    UndefinedCorrelationError,
)
from alphadoc.metrics import (
    CorrReport,
    avg_cross_sectional_corr,
    ols,
    ranks,
    spearman,
    spearman_matrix,
    zscore,
)
from tests.synthetic import informative_candidate_panel, panel_from_arrays, random_panel


def brute_force_ranks(x):
    x = np.asarray(x, dtype=float)
    return np.array([np.sum(x < v) + (np.sum(x == v) + 1) / 2.0 for v in x])


def brute_force_spearman(x, y):
    return float(np.corrcoef(brute_force_ranks(x), brute_force_ranks(y))[0, 1])


def normal_equations(X, y):
    design = np.column_stack([np.ones(len(y)), X])
    return np.linalg.inv(design.T @ design) @ design.T @ y


class TestRanks:

    def test_sorted_input(self):
        np.testing.assert_array_equal(ranks([10, 20, 30]), [1, 2, 3])

    def test_ties_get_average_rank(self):
        np.testing.assert_array_equal(ranks([5, 5, 1]), [2.5, 2.5, 1])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        x = rng.integers(0, 8, size=20).astype(float)
        np.testing.assert_array_equal(ranks(x), brute_force_ranks(x))

    def test_non_finite(self):
        with pytest.raises(NonFiniteInputError):
            ranks([1.0, np.nan, 2.0])
        with pytest.raises(NonFiniteInputError):
            ranks([])


class TestSpearman:

    def setup_method(self):
        self.x = np.random.default_rng(11).normal(size=25)

    def test_self_and_reversed(self):
        assert spearman(self.x, self.x) == pytest.approx(1.0, abs=1e-12)
        assert spearman(self.x, -self.x) == pytest.approx(-1.0, abs=1e-12)

    @pytest.mark.parametrize("transform", [np.exp, lambda v: v ** 3, lambda v: 4.0 * v - 2.0])
    def test_monotone_transform_invariance(self, transform):
        y = np.random.default_rng(12).normal(size=25)
        assert abs(spearman(transform(self.x), y) - spearman(self.x, y)) < 1e-12
        assert abs(spearman(self.x, transform(y)) - spearman(self.x, y)) < 1e-12

    def test_symmetric_and_bounded(self):
        y = np.random.default_rng(13).normal(size=25)
        assert spearman(self.x, y) == spearman(y, self.x)
        assert -1.0 <= spearman(self.x, y) <= 1.0

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            size = int(rng.integers(3, 31))
            x = rng.integers(0, 6, size=size).astype(float)
            y = rng.integers(0, 6, size=size).astype(float)
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            assert abs(spearman(x, y) - brute_force_spearman(x, y)) < 1e-12

    def test_constant_vector(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short(self):
        with pytest.raises(InsufficientObservationsError):
            spearman([1.0, 2.0], [2.0, 1.0])

    def test_matrix_marks_undefined_pairs(self):
        matrix = np.column_stack([[1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0], [7.0, 7.0, 7.0, 7.0]])
        result = spearman_matrix(matrix)
        np.testing.assert_array_equal(np.diag(result), [1.0, 1.0, 1.0])
        assert result[0, 1] == pytest.approx(-1.0)
        assert np.isnan(result[0, 2]) and np.isnan(result[2, 1])


class TestZscore:

    def test_small_vector(self):
        np.testing.assert_array_equal(zscore([1.0, 2.0, 3.0]), [-1.0, 0.0, 1.0])

    def test_random_vector(self):
        z = zscore(np.random.default_rng(5).lognormal(size=50))
        assert abs(z.mean()) < 1e-12
        assert abs(z.std(ddof=1) - 1.0) < 1e-12

    def test_constant_column(self):
        with pytest.raises(DegenerateColumnError):
            zscore([2.0, 2.0, 2.0])


class TestOls:

    def test_exact_linear_fit(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 3))
        y = 0.5 + X @ np.array([1.0, -2.0, 0.25])
        fit = ols(X, y)
        assert np.all(np.abs(fit.residuals) < 1e-10)
        assert abs(fit.r2 - 1.0) < 1e-10
        np.testing.assert_allclose(fit.coefficients, [0.5, 1.0, -2.0, 0.25], atol=1e-10)

    def test_duplicated_column_is_singular(self):
        X = np.random.default_rng(1).normal(size=(15, 2))
        with pytest.raises(SingularDesignError):
            ols(np.column_stack([X, X[:, 0]]), np.arange(15.0))

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            p = int(rng.integers(1, 9))
            n = int(rng.integers(p + 5, 51))
            X = rng.normal(size=(n, p))
            y = X @ rng.normal(size=p) + rng.normal(size=n)
            fit = ols(X, y)
            beta = normal_equations(X, y)
            np.testing.assert_allclose(fit.coefficients, beta, rtol=0, atol=1e-8)

            residuals = y - np.column_stack([np.ones(n), X]) @ beta
            r2 = 1.0 - residuals @ residuals / np.sum((y - y.mean()) ** 2)
            assert abs(fit.r2 - r2) < 1e-8
            assert fit.adj_r2 == 1.0 - (1.0 - fit.r2) * (n - 1) / (n - p - 1)
            assert fit.adj_r2 <= fit.r2

    def test_equivariance(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(30, 3))
        y = rng.normal(size=30)
        base = ols(X, y)
        np.testing.assert_allclose(ols(X, 3.0 * y).coefficients, 3.0 * base.coefficients, atol=1e-9)
        shifted = ols(X, y + 5.0).coefficients
        assert abs(shifted[0] - base.coefficients[0] - 5.0) < 1e-9
        np.testing.assert_allclose(shifted[1:], base.coefficients[1:], atol=1e-9)

    def test_too_few_rows(self):
        with pytest.raises(InsufficientObservationsError):
            ols(np.ones((3, 2)), np.ones(3))

    def test_constant_response(self):
        X = np.random.default_rng(2).normal(size=(10, 2))
        with pytest.raises(DegenerateColumnError):
            ols(X, np.full(10, 2.0))


class TestAverageCorrelation:

    def setup_method(self):
        self.test_dir = tempfile.mkdtemp()

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_single_date_average_equals_matrix(self):
        panel = random_panel(seed=1, n_companies=8, n_dates=2)
        report = avg_cross_sectional_corr(panel, ["PE", "PB"])
        # the synthetic panel has returns on both dates
        assert len(report.per_date) == 2
        one_date = panel.restrict(end=panel.dates[0])
        single = avg_cross_sectional_corr(one_date, ["PE", "PB"])
        np.testing.assert_array_equal(single.average, single.per_date[0][1])

    def test_monotone_column_has_unit_return_correlation(self):
        rng = np.random.default_rng(4)
        returns = rng.normal(size=(5, 10))
        panel = panel_from_arrays({"PE": np.exp(returns), "PB": rng.normal(size=(5, 10))}, returns)
        report = avg_cross_sectional_corr(panel, ["PE", "PB"])
        assert report.return_correlations()["PE"] == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_three_dates(self):
        rng = np.random.default_rng(9)
        pe, pb, returns = (rng.normal(size=(3, 6)) for _ in range(3))
        panel = panel_from_arrays({"PE": pe, "PB": pb}, returns)
        report = avg_cross_sectional_corr(panel, ["PE", "PB"])
        assert report.labels == ("PE", "PB", "return")

        expected = np.zeros((3, 3))
        for t in range(3):
            columns = [pe[t], pb[t], returns[t]]
            for i in range(3):
                for j in range(3):
                    expected[i, j] += brute_force_spearman(columns[i], columns[j]) / 3.0
        np.testing.assert_allclose(report.average, expected, atol=1e-12)

    def test_average_within_per_date_range(self):
        report = avg_cross_sectional_corr(random_panel(seed=2), ["PE", "PB", "ROE"])
        stacked = np.stack([m for _, m in report.per_date])
        assert np.all(report.average >= stacked.min(axis=0) - 1e-15)
        assert np.all(report.average <= stacked.max(axis=0) + 1e-15)
        assert np.allclose(report.average, report.average.T)

    def test_small_dates_are_skipped(self):
        rng = np.random.default_rng(6)
        returns = rng.normal(size=(4, 6))
        returns[1, :3] = np.nan
        panel = panel_from_arrays({"PE": rng.normal(size=(4, 6)), "PB": rng.normal(size=(4, 6))}, returns)
        report = avg_cross_sectional_corr(panel, ["PE", "PB"])
        assert [d for d, _ in report.skipped_dates] == [panel.dates[1]]
        assert len(report.per_date) == 3

    def test_no_usable_dates(self):
        rng = np.random.default_rng(7)
        # two companies never reach the three a single column needs
        panel = panel_from_arrays({"PE": rng.normal(size=(2, 2))}, rng.normal(size=(2, 2)))
        with pytest.raises(NoUsableDatesError):
            avg_cross_sectional_corr(panel, ["PE"])

    def test_empty_column_list(self):
        with pytest.raises(ConfigError):
            avg_cross_sectional_corr(random_panel(seed=0), [])

    def test_independent_of_worker_count(self):
        panel = random_panel(seed=3)
        columns = ["PE", "ROE", AlphaDef("PVS", "PVS", parse_alpha("ROE / PE"))]
        serial = avg_cross_sectional_corr(panel, columns, workers=1)
        parallel = avg_cross_sectional_corr(panel, columns, workers=4)
        assert np.array_equal(serial.average, parallel.average)

    def test_new_signals_carry_more_return_information(self):
        """Candidates built from the return driver beat unrelated existing signals"""
        panel = informative_candidate_panel(seed=21)
        existing = avg_cross_sectional_corr(panel, ["PE", "PB"]).return_correlations()
        new = avg_cross_sectional_corr(panel, [
            AlphaDef("QM", "QM", parse_alpha("ROE * GM")),
            AlphaDef("LQM", "LQM", parse_alpha("log(ROE * GM)")),
        ]).return_correlations()
        existing_abs = [abs(v) for v in existing.values()]
        new_abs = [abs(v) for v in new.values()]
        assert min(new_abs) >= min(existing_abs)
        assert max(new_abs) >= max(existing_abs)
        assert min(new_abs) > max(existing_abs)

    def test_csv_round_trip(self):
        report = avg_cross_sectional_corr(random_panel(seed=4), ["PE", "PB"])
        path = Path(self.test_dir) / "corr.csv"
        report.to_csv(path)
        loaded = CorrReport.from_csv(path)
        assert loaded.labels == report.labels
        assert loaded.dates == report.dates
        np.testing.assert_allclose(loaded.average, report.average, atol=1e-12)
