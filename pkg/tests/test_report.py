"""
Unit tests for SVG/CSV report rendering and the run summary
"""

import shutil
import tempfile
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd
import pytest

from alphadoc.dsl import AlphaDef, parse_alpha
from alphadoc.errors import InvalidStatisticsError
from alphadoc.fmb import BASELINE, BoxStats, FmbComparison, GammaSeries, fmb_compare
from alphadoc.metrics import CorrReport, avg_cross_sectional_corr
from alphadoc.report import (
    COLORMAP,
    BoxplotSpec,
    HeatmapSpec,
    emit_boxplot,
    emit_heatmap,
    read_heatmap_csv,
    scale_color,
    summary_markdown,
)
from tests.synthetic import random_panel

PVS = AlphaDef("Profit Value Score", "PVS", parse_alpha("ROE / PE"))


class TestHeatmap:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_identity_renders_reproducibly(self):
        spec = HeatmapSpec(("PE", "PB"), np.eye(2))
        first_svg, first_csv = emit_heatmap(spec, self.test_dir / "first.svg")
        second_svg, _ = emit_heatmap(spec, self.test_dir / "second.svg")
        assert first_svg.read_bytes() == second_svg.read_bytes()
        assert first_svg.read_text(encoding="utf-8").lstrip().startswith("<?xml")
        assert first_csv == self.test_dir / "first.csv"

    def test_csv_sidecar_round_trip(self):
        matrix = np.array([[1.0, -0.123456789], [-0.123456789, 1.0]])
        _, csv_path = emit_heatmap(HeatmapSpec(("PE", "return"), matrix), self.test_dir / "h.svg")
        labels, loaded = read_heatmap_csv(csv_path)
        assert labels == ("PE", "return")
        np.testing.assert_allclose(loaded, matrix, atol=1e-12)

    def test_nan_cells_are_kept_in_csv(self):
        matrix = np.array([[1.0, np.nan], [np.nan, 1.0]])
        _, csv_path = emit_heatmap(HeatmapSpec(("PE", "PB"), matrix), self.test_dir / "n.svg")
        _, loaded = read_heatmap_csv(csv_path)
        assert np.isnan(loaded[0, 1])

    def test_scale_endpoints(self):
        spec = HeatmapSpec(("PE", "PB"), np.eye(2))
        cmap = matplotlib.colormaps[COLORMAP]
        assert scale_color(spec, 1.0) == pytest.approx(tuple(cmap(1.0)))
        assert scale_color(spec, -1.0) == pytest.approx(tuple(cmap(0.0)))
        assert scale_color(spec, 5.0) == scale_color(spec, 1.0)

    def test_data_driven_scale(self):
        report = avg_cross_sectional_corr(random_panel(seed=1), ["PE", "PB", "ROE"])
        spec = HeatmapSpec.from_corr(report, data_driven=True)
        off_diagonal = report.average[~np.eye(len(report.labels), dtype=bool)]
        assert spec.vmax == pytest.approx(np.abs(off_diagonal).max())
        assert spec.vmin == -spec.vmax
        fixed = HeatmapSpec.from_corr(report)
        assert (fixed.vmin, fixed.vmax) == (-1.0, 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            HeatmapSpec(("PE",), np.eye(2))


class TestBoxplot:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_constant_distribution_renders(self):
        stats = BoxStats.from_values([0.4, 0.4, 0.4, 0.4])
        svg, csv_path = emit_boxplot(BoxplotSpec([BASELINE], [stats]), self.test_dir / "box.svg")
        assert svg.exists()
        frame = pd.read_csv(csv_path)
        assert list(frame["model"]) == [BASELINE]
        assert frame["median"][0] == pytest.approx(0.4)

    def test_baseline_is_drawn_last(self):
        stats = BoxStats.from_values([0.1, 0.2, 0.3])
        spec = BoxplotSpec([BASELINE, "PVS", "IQS"], [stats, stats, stats])
        assert spec.models == ["PVS", "IQS", BASELINE]

    def test_impossible_statistics(self):
        bad = BoxStats(median=0.8, q1=0.1, q3=0.5, whisker_lo=0.0, whisker_hi=0.9)
        with pytest.raises(InvalidStatisticsError):
            BoxplotSpec(["PVS"], [bad])

    def test_comparison_boxplot_is_reproducible(self):
        comparison = fmb_compare(random_panel(seed=3), ["PE", "PB"], [PVS])
        spec = BoxplotSpec.from_comparison(comparison)
        first, _ = emit_boxplot(spec, self.test_dir / "a.svg")
        second, _ = emit_boxplot(spec, self.test_dir / "b.svg")
        assert first.read_bytes() == second.read_bytes()


class TestSummary:

    def setup_method(self):
        self.panel = random_panel(seed=5)
        self.corr = avg_cross_sectional_corr(self.panel, ["PE", "PB", PVS])

    def test_baseline_only(self):
        comparison = fmb_compare(self.panel, ["PE", "PB"], [])
        text = summary_markdown(self.corr, comparison)
        assert text.startswith("# alphadoc run summary")
        model_rows = [line for line in text.splitlines() if line.startswith(f"| {BASELINE} |")]
        assert len(model_rows) == 1
        assert "Candidates improving" not in text

    def test_candidates_and_failures(self):
        comparison = fmb_compare(self.panel, ["PE", "PB"], [PVS])
        comparison.failures["EVC"] = "UnknownSignalError: Unknown signal identifier 'ROA'"
        text = summary_markdown(self.corr, comparison)
        assert "| PVS |" in text
        assert "Candidates improving on the baseline median:" in text
        assert "- EVC: UnknownSignalError" in text
        assert text.index("| PVS |") < text.index(f"| {BASELINE} |")

    def test_deterministic(self):
        comparison = fmb_compare(self.panel, ["PE", "PB"], [PVS])
        assert summary_markdown(self.corr, comparison) == summary_markdown(self.corr, comparison)


GOLDEN_DATES = [pd.Timestamp("2020-03-31"), pd.Timestamp("2020-06-30"), pd.Timestamp("2020-09-30")]


def gamma_series(labels, columns, adj_r2):
    return GammaSeries(tuple(labels), list(GOLDEN_DATES), np.zeros(len(GOLDEN_DATES)),
                       np.column_stack(columns), np.asarray(adj_r2, dtype=float))


def hand_built_results():
    """Correlation report and comparison with round numbers"""
    average = np.array([[1.0, 0.5, -0.125], [0.5, 1.0, 0.25], [-0.125, 0.25, 1.0]])
    counts = np.full((3, 3), 2)
    counts[1, 2] = counts[2, 1] = 1
    corr = CorrReport(("PE", "PVS", "return"), [], average,
                      [(pd.Timestamp("2020-12-31"), "too few companies")], counts)
    pe = [0.1, -0.1, 0.2]
    comparison = FmbComparison(
        baseline=gamma_series(["PE"], [pe], [0.1, 0.2, 0.3]),
        candidates={
            "PVS": gamma_series(["PE", "PVS"], [pe, [1.0, 2.0, 3.0]], [0.2, 0.25, 0.3]),
            "IQS": gamma_series(["PE", "IQS"], [pe, [0.5, 0.5, 0.5]], [0.1, 0.15, 0.2]),
        },
        summary={
            "PVS": BoxStats(0.25, 0.2, 0.3, 0.15, 0.35, (), 3),
            "IQS": BoxStats(0.15, 0.1, 0.2, 0.05, 0.25, (), 3),
            BASELINE: BoxStats(0.2, 0.15, 0.25, 0.1, 0.3, (), 3),
        },
        failures={"EVC": "UnknownSignalError: Unknown signal identifier 'ROA'"},
    )
    return corr, comparison


class TestGoldenOutputs:

    def setup_method(self):
        self.test_dir = Path(tempfile.mkdtemp())
        self.corr, self.comparison = hand_built_results()

    def teardown_method(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_summary_markdown(self, golden):
        golden.check_text("summary.md", summary_markdown(self.corr, self.comparison))

    def test_heatmap_sidecar(self, golden):
        _, csv_path = emit_heatmap(HeatmapSpec.from_corr(self.corr), self.test_dir / "heatmap.svg")
        golden.check_file("heatmap.csv", csv_path)

    def test_boxplot_sidecar(self, golden):
        _, csv_path = emit_boxplot(BoxplotSpec.from_comparison(self.comparison), self.test_dir / "box.svg")
        golden.check_file("boxplot.csv", csv_path)

    def test_heatmap_svg(self, golden):
        spec = HeatmapSpec.from_corr(self.corr, title="Average Spearman correlation (combined signals)")
        svg, _ = emit_heatmap(spec, self.test_dir / "heatmap.svg")
        golden.check_file("heatmap.svg", svg)

    def test_boxplot_svg(self, golden):
        spec = BoxplotSpec.from_comparison(self.comparison, "Adjusted R-squared by model")
        svg, _ = emit_boxplot(spec, self.test_dir / "box.svg")
        golden.check_file("boxplot.svg", svg)
