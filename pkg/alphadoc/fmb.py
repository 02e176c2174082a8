"""
Fama-MacBeth Regression
Two-step estimation (per-company time-series betas, then per-date
cross-sectional risk premia) and the baseline-vs-candidate comparison.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd
from matplotlib.cbook import boxplot_stats

from .dsl import AlphaDef
from .errors import (
    AlphaDocError,
    ConfigError,
    DataError,
    DegenerateColumnError,
    InsufficientObservationsError,
    InvalidStatisticsError,
    NoUsableDatesError,
    NumericError,
    OutputError,
    SingularDesignError,
)
from .metrics import OlsFit, ols, zscore
from .panel import Column, Panel, column_label, cross_section

logger = logging.getLogger(__name__)

BASELINE = "baseline"
INTERCEPT = "const"
WHISKER_IQR = 1.5

T = TypeVar("T")
R = TypeVar("R")


def _ordered_map(func: Callable[[T], R], items: Sequence[T], workers: int) -> List[R]:
    """Map preserving input order, optionally on a thread pool"""
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


@dataclass
class BetaMatrix:
    companies: Tuple[str, ...]
    regressor_labels: Tuple[str, ...]
    alphas: np.ndarray
    betas: np.ndarray
    per_company_fit: List[OlsFit]
    excluded: List[Tuple[str, str]] = field(default_factory=list)
    degenerate: List[Tuple[pd.Timestamp, str]] = field(default_factory=list)

    def beta(self, company: str, label: str) -> float:
        return float(self.betas[self.companies.index(company), self.regressor_labels.index(label)])

    def alpha(self, company: str) -> float:
        return float(self.alphas[self.companies.index(company)])


@dataclass
class GammaSeries:
    labels: Tuple[str, ...]
    dates: List[pd.Timestamp]
    gamma0: np.ndarray
    gammas: np.ndarray  # rows aligned with dates, columns with labels
    adj_r2: np.ndarray
    skipped_dates: List[Tuple[pd.Timestamp, str]] = field(default_factory=list)

    def term(self, label: str) -> np.ndarray:
        if label == INTERCEPT:
            return self.gamma0
        return self.gammas[:, self.labels.index(label)]


@dataclass(frozen=True)
class RiskPremium:
    mean: float
    std: float
    t_stat: float
    n_dates: int
    degenerate: bool = False


def _stacked_zscores(panel: Panel, signals: Sequence[Column]):
    """Per-date complete-case blocks with every column z-scored across companies"""
    blocks = []
    degenerate: List[Tuple[pd.Timestamp, str]] = []
    for date in panel.dates:
        try:
            cs = cross_section(panel, date, signals)
        except DataError as e:
            logger.debug(f"Step 1 ignores {date.date()}: {e}")
            continue
        z = np.empty_like(cs.signal_matrix)
        for j, label in enumerate(cs.labels):
            try:
                z[:, j] = zscore(cs.signal_matrix[:, j])
            except DegenerateColumnError:
                logger.warning(f"⚠️ Column {label} is constant at {date.date()}; dropped for that date")
                degenerate.append((date, label))
                z[:, j] = np.nan
        blocks.append(pd.DataFrame(
            np.column_stack([z, cs.returns]),
            index=pd.MultiIndex.from_product([[date], cs.companies], names=["date", "ticker"]),
        ))
    return blocks, degenerate


def step1_betas(panel: Panel, signals: Sequence[Column], workers: int = 1) -> BetaMatrix:
    """
    Regress each company's forward returns over time on its cross-sectionally
    z-scored signals. Companies with fewer than m + 3 complete observations or
    a singular design are excluded and listed.
    """
    labels = tuple(column_label(s) for s in signals)
    m = len(labels)
    blocks, degenerate = _stacked_zscores(panel, signals)
    stacked = pd.concat(blocks).sort_index() if blocks else pd.DataFrame()
    complete = stacked.dropna() if not stacked.empty else stacked

    def fit_company(company: str):
        if complete.empty or company not in complete.index.get_level_values("ticker"):
            return None, "no complete observations"
        rows = complete.xs(company, level="ticker").to_numpy()
        if len(rows) < m + 3:
            return None, f"only {len(rows)} complete observations, {m + 3} required"
        try:
            return ols(rows[:, :m], rows[:, m]), None
        except NumericError as e:
            return None, f"{type(e).__name__}: {e}"

    results = _ordered_map(fit_company, panel.companies, workers)

    companies: List[str] = []
    fits: List[OlsFit] = []
    excluded: List[Tuple[str, str]] = []
    for company, (fit, reason) in zip(panel.companies, results):
        if fit is None:
            excluded.append((company, reason))
        else:
            companies.append(company)
            fits.append(fit)
    if excluded:
        logger.warning(f"⚠️ Step 1 excluded {len(excluded)} of {panel.n} companies")
        for company, reason in excluded:
            logger.debug(f"   {company}: {reason}")

    if not fits:
        if all(reason.startswith(SingularDesignError.__name__) for _, reason in excluded):
            raise SingularDesignError(f"Singular step-1 design for every company ({', '.join(labels)})")
        raise InsufficientObservationsError(
            f"No company has the {m + 3} complete observations step 1 requires"
        )
    return BetaMatrix(
        companies=tuple(companies),
        regressor_labels=labels,
        alphas=np.array([f.intercept for f in fits]),
        betas=np.vstack([f.slopes for f in fits]),
        per_company_fit=fits,
        excluded=excluded,
        degenerate=degenerate,
    )


def step2_cross_sectional(panel: Panel, betas: BetaMatrix, workers: int = 1) -> GammaSeries:
    """Per date, regress the cross-section of forward returns on the fixed beta rows"""
    m = len(betas.regressor_labels)
    required = m + 2

    def fit_date(date):
        returns = panel.fwd_returns.xs(date, level="date").reindex(list(betas.companies)).to_numpy(dtype=float)
        usable = np.isfinite(returns)
        count = int(usable.sum())
        if count < required:
            return None, f"{count} companies with returns, {required} required"
        try:
            return ols(betas.betas[usable], returns[usable]), None
        except NumericError as e:
            return None, f"{type(e).__name__}: {e}"

    results = _ordered_map(fit_date, list(panel.dates), workers)

    dates: List[pd.Timestamp] = []
    fits: List[OlsFit] = []
    skipped: List[Tuple[pd.Timestamp, str]] = []
    for date, (fit, reason) in zip(panel.dates, results):
        if fit is None:
            logger.warning(f"⚠️ Skipping {date.date()} in step 2: {reason}")
            skipped.append((date, reason))
        else:
            dates.append(date)
            fits.append(fit)
    if not fits:
        raise NoUsableDatesError("Step 2 has no usable dates")
    return GammaSeries(
        labels=betas.regressor_labels,
        dates=dates,
        gamma0=np.array([f.intercept for f in fits]),
        gammas=np.vstack([f.slopes for f in fits]),
        adj_r2=np.array([f.adj_r2 for f in fits]),
        skipped_dates=skipped,
    )


def _premium(values: np.ndarray) -> RiskPremium:
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    if np.ptp(values) == 0.0 or std == 0.0:
        return RiskPremium(mean, 0.0, float("inf"), len(values), degenerate=True)
    return RiskPremium(mean, std, mean / (std / np.sqrt(len(values))), len(values))


def risk_premia(gs: GammaSeries) -> Dict[str, RiskPremium]:
    """Mean gamma and plain Fama-MacBeth t-statistic per term, intercept under 'const'"""
    if len(gs.dates) < 2:
        raise InsufficientObservationsError(f"Risk premia need at least 2 dates, got {len(gs.dates)}")
    premia = {INTERCEPT: _premium(gs.gamma0)}
    for j, label in enumerate(gs.labels):
        premia[label] = _premium(gs.gammas[:, j])
    return premia


@dataclass(frozen=True)
class BoxStats:
    """Tukey box statistics of a model's adjusted R-squared distribution"""
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: Tuple[float, ...] = ()
    n_dates: int = 0

    @classmethod
    def from_values(cls, values: Iterable[float]) -> "BoxStats":
        data = np.asarray(list(values), dtype=float)
        stats = boxplot_stats(data, whis=WHISKER_IQR)[0]
        return cls(
            median=float(stats["med"]),
            q1=float(stats["q1"]),
            q3=float(stats["q3"]),
            whisker_lo=float(stats["whislo"]),
            whisker_hi=float(stats["whishi"]),
            outliers=tuple(float(v) for v in stats["fliers"]),
            n_dates=len(data),
        )

    def validate(self, model: str = "") -> None:
        values = (self.median, self.q1, self.q3, self.whisker_lo, self.whisker_hi) + self.outliers
        if not all(np.isfinite(v) for v in values):
            raise InvalidStatisticsError(f"Non-finite box statistics for {model or 'model'}")
        if not (self.whisker_lo <= self.q1 <= self.median <= self.q3 <= self.whisker_hi):
            raise InvalidStatisticsError(
                f"Impossible box statistics for {model or 'model'}: "
                f"whiskers/quartiles/median out of order"
            )


@dataclass
class FmbComparison:
    baseline: GammaSeries
    candidates: Dict[str, GammaSeries] = field(default_factory=dict)
    summary: Dict[str, BoxStats] = field(default_factory=dict)
    failures: Dict[str, str] = field(default_factory=dict)
    betas: Dict[str, BetaMatrix] = field(default_factory=dict)
    date_notes: Dict[str, List[Tuple[pd.Timestamp, str]]] = field(default_factory=dict)

    ADJ_R2_FILE = "fmb_adj_r2.csv"
    SUMMARY_FILE = "fmb_summary.csv"
    GAMMAS_FILE = "fmb_gammas.csv"
    FAILURES_FILE = "fmb_failures.csv"

    def models(self) -> List[str]:
        """Candidates in run order, baseline last"""
        return list(self.candidates) + [BASELINE]

    def series(self, model: str) -> GammaSeries:
        return self.baseline if model == BASELINE else self.candidates[model]

    def premia(self, model: str) -> Optional[Dict[str, RiskPremium]]:
        try:
            return risk_premia(self.series(model))
        except InsufficientObservationsError:
            return None

    # CSV round trip

    def adj_r2_frame(self) -> pd.DataFrame:
        records = [
            (model, date.strftime("%Y-%m-%d"), float(value))
            for model in self.models()
            for date, value in zip(self.series(model).dates, self.series(model).adj_r2)
        ]
        return pd.DataFrame(records, columns=["model", "date", "adj_r2"])

    def summary_frame(self) -> pd.DataFrame:
        records = [
            (model, s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi, s.n_dates,
             ";".join(repr(v) for v in s.outliers))
            for model, s in ((m, self.summary[m]) for m in self.models())
        ]
        return pd.DataFrame(records, columns=["model", "median", "q1", "q3", "whisker_lo",
                                              "whisker_hi", "n_dates", "outliers"])

    def gammas_frame(self) -> pd.DataFrame:
        records = []
        for model in self.models():
            gs = self.series(model)
            terms = (INTERCEPT,) + gs.labels
            for i, date in enumerate(gs.dates):
                for term in terms:
                    records.append((model, date.strftime("%Y-%m-%d"), term, float(gs.term(term)[i])))
        return pd.DataFrame(records, columns=["model", "date", "term", "gamma"])

    def failures_frame(self) -> pd.DataFrame:
        return pd.DataFrame(sorted(self.failures.items()), columns=["model", "reason"])

    def write(self, directory: Union[str, Path]) -> List[Path]:
        directory = Path(directory)
        outputs = [
            (self.ADJ_R2_FILE, self.adj_r2_frame()),
            (self.SUMMARY_FILE, self.summary_frame()),
            (self.GAMMAS_FILE, self.gammas_frame()),
            (self.FAILURES_FILE, self.failures_frame()),
        ]
        written = []
        try:
            directory.mkdir(parents=True, exist_ok=True)
            for name, frame in outputs:
                frame.to_csv(directory / name, index=False)
                written.append(directory / name)
        except OSError as e:
            raise OutputError(f"Cannot write Fama-MacBeth results to {directory}: {e}") from e
        return written

    @classmethod
    def from_directory(cls, directory: Union[str, Path]) -> "FmbComparison":
        directory = Path(directory)
        read = {}
        for name in (cls.ADJ_R2_FILE, cls.SUMMARY_FILE, cls.GAMMAS_FILE, cls.FAILURES_FILE):
            path = directory / name
            if not path.exists():
                raise DataError(f"Fama-MacBeth output not found: {path}")
            read[name] = pd.read_csv(path, dtype={"model": str, "date": str, "term": str,
                                                  "reason": str, "outliers": str},
                                     keep_default_na=False)

        gammas = read[cls.GAMMAS_FILE]
        adj = read[cls.ADJ_R2_FILE]
        series: Dict[str, GammaSeries] = {}
        for model in dict.fromkeys(adj["model"]):
            rows = gammas[gammas["model"] == model]
            terms = list(dict.fromkeys(rows["term"]))
            labels = tuple(t for t in terms if t != INTERCEPT)
            table = rows.pivot(index="date", columns="term", values="gamma").astype(float)
            model_adj = adj[adj["model"] == model]
            dates = list(model_adj["date"])
            table = table.reindex(dates)
            series[model] = GammaSeries(
                labels=labels,
                dates=[pd.Timestamp(d) for d in dates],
                gamma0=table[INTERCEPT].to_numpy(),
                gammas=table[list(labels)].to_numpy(),
                adj_r2=model_adj["adj_r2"].astype(float).to_numpy(),
            )
        if BASELINE not in series:
            raise DataError(f"{directory / cls.ADJ_R2_FILE}: no baseline model")

        summary = {}
        for row in read[cls.SUMMARY_FILE].itertuples(index=False):
            outliers = tuple(float(v) for v in row.outliers.split(";") if v)
            summary[row.model] = BoxStats(float(row.median), float(row.q1), float(row.q3),
                                          float(row.whisker_lo), float(row.whisker_hi),
                                          outliers, int(row.n_dates))
        failures = dict(zip(read[cls.FAILURES_FILE]["model"], read[cls.FAILURES_FILE]["reason"]))
        baseline = series.pop(BASELINE)
        return cls(baseline, series, summary, failures)


def _run_model(panel: Panel, columns: Sequence[Column], workers: int):
    betas = step1_betas(panel, columns, workers)
    return betas, step2_cross_sectional(panel, betas, workers)


def _date_differences(baseline: GammaSeries, candidate: GammaSeries) -> List[Tuple[pd.Timestamp, str]]:
    reasons = dict(baseline.skipped_dates)
    reasons.update({d: f"candidate: {r}" for d, r in candidate.skipped_dates})
    differing = sorted(set(baseline.dates) ^ set(candidate.dates))
    return [(date, reasons.get(date, "date not usable in both models")) for date in differing]


def fmb_compare(panel: Panel, baseline: Sequence[str], candidates: Sequence[AlphaDef],
                workers: int = 1) -> FmbComparison:
    """
    Run the two-step regression for the baseline signals and for the baseline
    plus each candidate. A failing candidate is recorded, not raised.
    """
    if not baseline:
        raise ConfigError("Baseline signal list is empty")
    logger.info(f"🧮 Fama-MacBeth baseline: {', '.join(baseline)}")
    base_betas, base_gammas = _run_model(panel, list(baseline), workers)
    comparison = FmbComparison(baseline=base_gammas, betas={BASELINE: base_betas})

    for candidate in candidates:
        name = candidate.abbreviation
        try:
            betas, gammas = _run_model(panel, list(baseline) + [candidate], workers)
        except AlphaDocError as e:
            logger.warning(f"⚠️ Candidate {name} failed: {e}")
            comparison.failures[name] = f"{type(e).__name__}: {e}"
            continue
        comparison.candidates[name] = gammas
        comparison.betas[name] = betas
        notes = _date_differences(base_gammas, gammas)
        if notes:
            comparison.date_notes[name] = notes
        logger.info(f"✅ Candidate {name}: {len(gammas.dates)} usable dates")

    comparison.summary = {
        model: BoxStats.from_values(comparison.series(model).adj_r2) for model in comparison.models()
    }
    return comparison
