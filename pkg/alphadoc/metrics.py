"""
Metrics
Rank statistics, cross-sectional correlation averaging, z-scores and the
OLS core shared by every downstream evaluation.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular
from scipy.stats import rankdata

from .errors import (
    ConfigError,
    DataError,
    DegenerateColumnError,
    InsufficientObservationsError,
    NoUsableDatesError,
    NonFiniteInputError,
    OutputError,
    SingularDesignError,
    UndefinedCorrelationError,
)
from .panel import RETURN_LABEL, Column, Panel, column_label, cross_section

logger = logging.getLogger(__name__)

# Designs above this condition number are treated as rank deficient
MAX_CONDITION = 1e12
AVERAGE_ROW = "average"


def _as_finite_vector(x, name: str = "x") -> np.ndarray:
    values = np.asarray(x, dtype=float).ravel()
    if values.size == 0:
        raise NonFiniteInputError(f"{name} is empty")
    if not np.isfinite(values).all():
        raise NonFiniteInputError(f"{name} contains non-finite values")
    return values


def ranks(x) -> np.ndarray:
    """1-based ranks; ties get the average of their positions"""
    return rankdata(_as_finite_vector(x), method="average").astype(float)


def _rank_correlation(rx: np.ndarray, ry: np.ndarray) -> float:
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("Spearman correlation undefined for a constant vector")
    rho = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(rho, -1.0, 1.0))


def spearman(x, y) -> float:
    """Pearson correlation of the average ranks of x and y"""
    xs = _as_finite_vector(x, "x")
    ys = _as_finite_vector(y, "y")
    if xs.size != ys.size:
        raise ValueError(f"Length mismatch: {xs.size} vs {ys.size}")
    if xs.size < 3:
        raise InsufficientObservationsError(f"Spearman needs at least 3 observations, got {xs.size}")
    return _rank_correlation(ranks(xs), ranks(ys))


def spearman_matrix(matrix: np.ndarray) -> np.ndarray:
    """Pairwise Spearman over the columns; undefined pairs are NaN, diagonal 1"""
    columns = matrix.shape[1]
    ranked = [ranks(matrix[:, j]) for j in range(columns)]
    result = np.eye(columns)
    for i in range(columns):
        for j in range(i + 1, columns):
            try:
                rho = _rank_correlation(ranked[i], ranked[j])
            except UndefinedCorrelationError:
                rho = np.nan
            result[i, j] = result[j, i] = rho
    return result


@dataclass
class CorrReport:
    """Per-date Spearman matrices over signals + return, and their average"""
    labels: Tuple[str, ...]
    per_date: List[Tuple[pd.Timestamp, np.ndarray]]
    average: np.ndarray
    skipped_dates: List[Tuple[pd.Timestamp, str]] = field(default_factory=list)
    pair_counts: Optional[np.ndarray] = None

    @property
    def dates(self) -> List[pd.Timestamp]:
        return [date for date, _ in self.per_date]

    def return_correlations(self) -> Dict[str, float]:
        """Average correlation of each column with the forward return"""
        if RETURN_LABEL not in self.labels:
            return {}
        column = self.labels.index(RETURN_LABEL)
        return {
            label: float(self.average[row, column])
            for row, label in enumerate(self.labels) if label != RETURN_LABEL
        }

    def to_frame(self) -> pd.DataFrame:
        records = []
        blocks = [(date.strftime("%Y-%m-%d"), matrix) for date, matrix in self.per_date]
        blocks.append((AVERAGE_ROW, self.average))
        for date, matrix in blocks:
            for i, row in enumerate(self.labels):
                for j, col in enumerate(self.labels):
                    records.append((date, row, col, float(matrix[i, j])))
        return pd.DataFrame(records, columns=["date", "row_label", "col_label", "rho"])

    def to_csv(self, path: Union[str, Path]) -> None:
        try:
            self.to_frame().to_csv(path, index=False)
        except OSError as e:
            raise OutputError(f"Cannot write {path}: {e}") from e

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "CorrReport":
        path = Path(path)
        if not path.exists():
            raise DataError(f"Correlation file not found: {path}")
        frame = pd.read_csv(path, dtype={"date": str, "row_label": str, "col_label": str})
        labels = tuple(dict.fromkeys(frame["row_label"]))
        position = {label: i for i, label in enumerate(labels)}
        blocks: Dict[str, np.ndarray] = {}
        for date, rows in frame.groupby("date", sort=False):
            matrix = np.full((len(labels), len(labels)), np.nan)
            for row, col, rho in zip(rows["row_label"], rows["col_label"], rows["rho"]):
                matrix[position[row], position[col]] = rho
            blocks[date] = matrix
        if AVERAGE_ROW not in blocks:
            raise DataError(f"{path}: no '{AVERAGE_ROW}' rows")
        average = blocks.pop(AVERAGE_ROW)
        per_date = [(pd.Timestamp(date), matrix) for date, matrix in blocks.items()]
        counts = np.sum([np.isfinite(m) for _, m in per_date], axis=0).astype(int) if per_date else None
        return cls(labels, per_date, average, [], counts)


def _date_matrix(panel: Panel, date, columns: Sequence[Column]):
    try:
        cs = cross_section(panel, date, columns)
    except DataError as e:
        return None, str(e)
    matrix = np.column_stack([cs.signal_matrix, cs.returns])
    return spearman_matrix(matrix), None


def avg_cross_sectional_corr(panel: Panel, columns: Sequence[Column], workers: int = 1) -> CorrReport:
    """
    Spearman matrix of the requested columns plus the forward return at each
    date, averaged over usable dates. Dates whose cross-section is too small
    are skipped and listed; undefined pairs are excluded per pair.
    """
    if not columns:
        raise ConfigError("At least one column is required for a correlation report")
    labels = tuple(column_label(c) for c in columns) + (RETURN_LABEL,)

    def compute(date):
        return _date_matrix(panel, date, columns)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(compute, panel.dates))
    else:
        results = [compute(date) for date in panel.dates]

    per_date: List[Tuple[pd.Timestamp, np.ndarray]] = []
    skipped: List[Tuple[pd.Timestamp, str]] = []
    for date, (matrix, reason) in zip(panel.dates, results):
        if matrix is None:
            logger.warning(f"⚠️ Skipping {date.date()}: {reason}")
            skipped.append((date, reason))
        else:
            per_date.append((date, matrix))
    if not per_date:
        raise NoUsableDatesError(f"No usable dates for columns {', '.join(labels[:-1])}")

    # fixed date-ordered summation keeps the average independent of worker count
    size = len(labels)
    total = np.zeros((size, size))
    counts = np.zeros((size, size), dtype=int)
    for _, matrix in per_date:
        usable = np.isfinite(matrix)
        total[usable] += matrix[usable]
        counts += usable
    with np.errstate(invalid="ignore", divide="ignore"):
        average = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    undefined = int(np.sum(counts < len(per_date)) // 2)
    if undefined:
        logger.warning(f"⚠️ {undefined} column pair(s) undefined on some dates; averaged over fewer dates")
    logger.info(f"📈 Averaged correlations over {len(per_date)} date(s), skipped {len(skipped)}")
    return CorrReport(labels, per_date, average, skipped, counts)


def zscore(x) -> np.ndarray:
    """(x - mean) / sample std"""
    values = _as_finite_vector(x)
    if values.size < 2:
        raise InsufficientObservationsError("z-score needs at least 2 values")
    std = values.std(ddof=1)
    if np.ptp(values) == 0.0 or std == 0.0:
        raise DegenerateColumnError("Zero standard deviation")
    return (values - values.mean()) / std


@dataclass(frozen=True)
class OlsFit:
    coefficients: np.ndarray  # intercept first
    residuals: np.ndarray
    r2: float
    adj_r2: float
    n_obs: int
    n_regressors: int

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coefficients[1:]


def ols(X, y) -> OlsFit:
    """
    Least squares of y on [1, X] via QR. Raises SingularDesignError when the
    design's condition number exceeds MAX_CONDITION.
    """
    design = np.asarray(X, dtype=float)
    if design.ndim == 1:
        design = design[:, None]
    response = np.asarray(y, dtype=float).ravel()
    n_obs, n_regressors = design.shape
    if response.size != n_obs:
        raise ValueError(f"Design has {n_obs} rows but response has {response.size}")
    if not (np.isfinite(design).all() and np.isfinite(response).all()):
        raise NonFiniteInputError("OLS inputs contain non-finite values")
    if n_obs < n_regressors + 2:
        raise InsufficientObservationsError(
            f"OLS needs at least {n_regressors + 2} observations, got {n_obs}"
        )

    design = np.column_stack([np.ones(n_obs), design])
    condition = float(np.linalg.cond(design))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularDesignError(f"Rank-deficient design (condition number {condition:.3g})", condition)

    q, r = np.linalg.qr(design)
    coefficients = solve_triangular(r, q.T @ response)
    residuals = response - design @ coefficients

    centered = response - response.mean()
    sst = float(centered @ centered)
    if sst == 0.0:
        raise DegenerateColumnError("Response has zero variance")
    ssr = float(residuals @ residuals)
    r2 = float(np.clip(1.0 - ssr / sst, 0.0, 1.0))
    adj_r2 = 1.0 - (1.0 - r2) * (n_obs - 1) / (n_obs - n_regressors - 1)
    return OlsFit(coefficients, residuals, r2, adj_r2, n_obs, n_regressors)
