"""
Report Rendering
Correlation heatmaps and adjusted R-squared box plots as SVG files with CSV
sidecars, plus the markdown run summary.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.colors import Normalize  # noqa: E402

from .errors import OutputError  # noqa: E402
from .fmb import BASELINE, BoxStats, FmbComparison  # noqa: E402
from .metrics import CorrReport  # noqa: E402
from .panel import RETURN_LABEL  # noqa: E402

logger = logging.getLogger(__name__)

COLORMAP = "coolwarm"
MEDIAN_COLOR = "orange"

# fixed salt and no date metadata keep SVG bytes reproducible
SVG_RC = {
    "svg.hashsalt": "alphadoc",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 10,
}
SVG_METADATA = {"Date": None}

PathLike = Union[str, Path]


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".csv")


def _save_svg(fig, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", bbox_inches="tight", metadata=SVG_METADATA)
    except OSError as e:
        raise OutputError(f"Cannot write {path}: {e}") from e
    finally:
        plt.close(fig)


@dataclass
class HeatmapSpec:
    labels: Tuple[str, ...]
    matrix: np.ndarray
    vmin: float = -1.0
    vmax: float = 1.0
    precision: int = 2
    title: str = ""

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.matrix = np.asarray(self.matrix, dtype=float)
        size = len(self.labels)
        if self.matrix.shape != (size, size):
            raise ValueError(f"Heatmap matrix shape {self.matrix.shape} does not match {size} labels")
        if not self.vmin < self.vmax:
            raise ValueError(f"Invalid colour scale bounds [{self.vmin}, {self.vmax}]")

    @classmethod
    def from_corr(cls, report: CorrReport, data_driven: bool = False, title: str = "") -> "HeatmapSpec":
        """Average matrix of a correlation report; [-1, 1] scale unless data_driven"""
        matrix = report.average
        vmin, vmax = -1.0, 1.0
        if data_driven:
            finite = matrix[np.isfinite(matrix) & ~np.eye(len(matrix), dtype=bool)]
            bound = float(np.abs(finite).max()) if finite.size else 1.0
            if bound > 0:
                vmin, vmax = -bound, bound
        return cls(report.labels, matrix, vmin, vmax, title=title)


def scale_color(spec: HeatmapSpec, value: float) -> Tuple[float, float, float, float]:
    """RGBA colour a heatmap cell with this value is drawn in"""
    cmap = matplotlib.colormaps[COLORMAP]
    norm = Normalize(vmin=spec.vmin, vmax=spec.vmax, clip=True)
    return tuple(float(c) for c in cmap(norm(value)))


def emit_heatmap(spec: HeatmapSpec, path: PathLike) -> Tuple[Path, Path]:
    """Write `<path>.svg` and its `.csv` sidecar; returns both paths"""
    path = Path(path)
    size = len(spec.labels)
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * size + 2.0), max(3.5, 0.7 * size + 1.5)))
        image = ax.imshow(spec.matrix, cmap=COLORMAP, vmin=spec.vmin, vmax=spec.vmax, aspect="auto")
        fig.colorbar(image, ax=ax, label="Spearman correlation")
        ax.set_xticks(range(size))
        ax.set_xticklabels(spec.labels, rotation=45, ha="right")
        ax.set_yticks(range(size))
        ax.set_yticklabels(spec.labels)
        for i in range(size):
            for j in range(size):
                value = spec.matrix[i, j]
                if np.isfinite(value):
                    ax.text(j, i, f"{value:.{spec.precision}f}", ha="center", va="center", fontsize=8)
        if spec.title:
            ax.set_title(spec.title)
        _save_svg(fig, path)

    csv_path = _sidecar(path)
    frame = pd.DataFrame(spec.matrix, index=pd.Index(spec.labels, name="label"), columns=spec.labels)
    try:
        frame.to_csv(csv_path)
    except OSError as e:
        raise OutputError(f"Cannot write {csv_path}: {e}") from e
    logger.info(f"🖼️ Heatmap written to {path}")
    return path, csv_path


def read_heatmap_csv(path: PathLike) -> Tuple[Tuple[str, ...], np.ndarray]:
    frame = pd.read_csv(path, index_col=0)
    return tuple(frame.index.astype(str)), frame.to_numpy(dtype=float)


@dataclass
class BoxplotSpec:
    """Per-model box statistics; the baseline is always drawn last"""
    models: List[str]
    stats: List[BoxStats]
    title: str = ""
    ylabel: str = "Adjusted R-squared"

    def __post_init__(self):
        if len(self.models) != len(self.stats):
            raise ValueError("Each model needs exactly one set of box statistics")
        if BASELINE in self.models and self.models[-1] != BASELINE:
            index = self.models.index(BASELINE)
            self.models = self.models[:index] + self.models[index + 1:] + [BASELINE]
            self.stats = self.stats[:index] + self.stats[index + 1:] + [self.stats[index]]
        for model, stats in zip(self.models, self.stats):
            stats.validate(model)

    @classmethod
    def from_comparison(cls, comparison: FmbComparison, title: str = "") -> "BoxplotSpec":
        models = comparison.models()
        return cls(models, [comparison.summary[m] for m in models], title)

    def to_frame(self) -> pd.DataFrame:
        records = [
            (model, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi, s.n_dates,
             ";".join(repr(v) for v in s.outliers))
            for model, s in zip(self.models, self.stats)
        ]
        return pd.DataFrame(records, columns=["model", "median", "q1", "q3", "whisker_lo",
                                              "whisker_hi", "n_dates", "outliers"])


def emit_boxplot(spec: BoxplotSpec, path: PathLike) -> Tuple[Path, Path]:
    """Write the adjusted R-squared box plot (medians in orange) and its CSV"""
    path = Path(path)
    boxes = [
        {
            "label": model,
            "med": s.median,
            "q1": s.q1,
            "q3": s.q3,
            "whislo": s.whisker_lo,
            "whishi": s.whisker_hi,
            "fliers": list(s.outliers),
        }
        for model, s in zip(spec.models, spec.stats)
    ]
    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(boxes) + 1.5), 4.5))
        ax.bxp(boxes, showfliers=True, medianprops={"color": MEDIAN_COLOR, "linewidth": 2})
        ax.set_ylabel(spec.ylabel)
        ax.tick_params(axis="x", labelrotation=30)
        if spec.title:
            ax.set_title(spec.title)
        _save_svg(fig, path)

    csv_path = _sidecar(path)
    try:
        spec.to_frame().to_csv(csv_path, index=False)
    except OSError as e:
        raise OutputError(f"Cannot write {csv_path}: {e}") from e
    logger.info(f"🖼️ Box plot written to {path}")
    return path, csv_path


def _number(value: Optional[float], digits: int = 4) -> str:
    if value is None or not np.isfinite(value):
        if value is not None and np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return "n/a"
    return f"{value:.{digits}f}"


def summary_markdown(corr: CorrReport, comparison: FmbComparison) -> str:
    """Run summary: return correlations per column, adj. R-squared medians per model"""
    lines = ["# alphadoc run summary", ""]

    lines += ["## Average rank correlation with the forward return", ""]
    lines += ["| column | average rho | usable dates |", "|---|---|---|"]
    return_column = corr.labels.index(RETURN_LABEL) if RETURN_LABEL in corr.labels else None
    for row, (label, rho) in enumerate(corr.return_correlations().items()):
        count = "n/a"
        if corr.pair_counts is not None and return_column is not None:
            count = str(int(corr.pair_counts[corr.labels.index(label), return_column]))
        lines.append(f"| {label} | {_number(rho)} | {count} |")
    if corr.skipped_dates:
        lines.append("")
        lines.append(f"Skipped dates: {len(corr.skipped_dates)}")
    lines.append("")

    lines += ["## Adjusted R-squared by model", ""]
    lines += ["| model | median | q1 | q3 | dates | delta vs baseline | own t-stat |",
              "|---|---|---|---|---|---|---|"]
    baseline_median = comparison.summary[BASELINE].median
    for model in comparison.models():
        stats = comparison.summary[model]
        delta = "-" if model == BASELINE else _number(stats.median - baseline_median)
        t_stat = "-"
        if model != BASELINE:
            premia = comparison.premia(model)
            if premia is not None and model in premia:
                t_stat = _number(premia[model].t_stat, 2)
        lines.append(
            f"| {model} | {_number(stats.median)} | {_number(stats.q1)} | {_number(stats.q3)} "
            f"| {stats.n_dates} | {delta} | {t_stat} |"
        )
    lines.append("")

    improved = [m for m in comparison.candidates if comparison.summary[m].median > baseline_median]
    if comparison.candidates:
        lines.append(f"Candidates improving on the baseline median: {len(improved)} of "
                     f"{len(comparison.candidates)}")
        lines.append("")

    if comparison.failures:
        lines += ["## Failed candidates", ""]
        for model, reason in sorted(comparison.failures.items()):
            lines.append(f"- {model}: {reason}")
        lines.append("")
    return "\n".join(lines)
