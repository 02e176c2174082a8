"""
Panel Loader
Loads company signal histories, aligns them with forward returns computed
from a price file, and serves complete-case cross-sections.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .dsl import (
    CANONICAL_SIGNALS,
    DEFAULT_ALIASES,
    AlphaDef,
    AlphaExpr,
    evaluate_frame,
    render_alpha,
)
from .errors import (
    CacheError,
    DataError,
    EmptyPanelError,
    InsufficientCrossSectionError,
    OutputError,
    SampleSizeError,
    SchemaError,
    UnknownSignalError,
)

logger = logging.getLogger(__name__)

RETURN_LABEL = "return"

PathLike = Union[str, Path]
Column = Union[str, AlphaDef, AlphaExpr]


class Horizon(str, Enum):
    ONE_MONTH = "1M"
    THREE_MONTH = "3M"

    @classmethod
    def parse(cls, value: Union[str, "Horizon"]) -> "Horizon":
        if isinstance(value, Horizon):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        if key in ("1m", "onemonth", "1month"):
            return cls.ONE_MONTH
        if key in ("3m", "threemonth", "3month", "quarter", "quarterly"):
            return cls.THREE_MONTH
        raise ValueError(f"Unknown horizon: {value!r} (expected 1M or 3M)")


def column_label(column: Column) -> str:
    """Label a requested column: signal id, alpha abbreviation or rendered formula"""
    if isinstance(column, str):
        return column
    if isinstance(column, AlphaDef):
        return column.abbreviation
    return render_alpha(column)


@dataclass(frozen=True)
class Panel:
    """
    Companies x dates x signals, plus the forward return for one horizon.
    `values` and `fwd_returns` share a (date, ticker) MultiIndex; NaN = missing.
    Treated as immutable after load.
    """
    dates: Tuple[pd.Timestamp, ...]
    companies: Tuple[str, ...]
    signal_names: Tuple[str, ...]
    values: pd.DataFrame
    fwd_returns: pd.Series
    horizon: Horizon = Horizon.THREE_MONTH
    sectors: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        dates = list(self.dates)
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise DataError("Panel dates must be strictly increasing without duplicates")
        if tuple(self.values.columns) != tuple(self.signal_names):
            raise DataError("Panel value columns do not match signal_names")
        if not self.values.index.equals(self.fwd_returns.index):
            raise DataError("Panel values and forward returns are not aligned")
        index_dates = set(self.values.index.get_level_values("date"))
        index_companies = set(self.values.index.get_level_values("ticker"))
        if not index_dates <= set(dates) or not index_companies <= set(self.companies):
            raise DataError("Panel rows reference unknown dates or companies")

    # shape: n companies, T dates, m signals

    @property
    def n(self) -> int:
        return len(self.companies)

    @property
    def T(self) -> int:
        return len(self.dates)

    @property
    def m(self) -> int:
        return len(self.signal_names)

    def value(self, company: str, date, signal: str) -> Optional[float]:
        try:
            result = self.values.at[(pd.Timestamp(date), company), signal]
        except KeyError:
            return None
        return None if pd.isna(result) else float(result)

    def fwd_return(self, company: str, date) -> Optional[float]:
        try:
            result = self.fwd_returns.loc[(pd.Timestamp(date), company)]
        except KeyError:
            return None
        return None if pd.isna(result) else float(result)

    def frame_at(self, date) -> pd.DataFrame:
        """Rows observed at one date, indexed by ticker (sorted), signals + return"""
        date = pd.Timestamp(date)
        if date not in self.dates:
            raise DataError(f"Date {date.date()} is not in the panel")
        frame = self.values.xs(date, level="date").copy()
        frame[RETURN_LABEL] = self.fwd_returns.xs(date, level="date")
        return frame.sort_index()

    def missing_tally(self) -> Dict[str, int]:
        tally = {name: int(self.values[name].isna().sum()) for name in self.signal_names}
        tally[RETURN_LABEL] = int(self.fwd_returns.isna().sum())
        return tally

    def to_frame(self) -> pd.DataFrame:
        """Long frame: date, ticker, sector, signals..., return"""
        frame = self.values.copy()
        frame[RETURN_LABEL] = self.fwd_returns
        frame = frame.reset_index()
        frame.insert(2, "sector", frame["ticker"].map(lambda t: self.sectors.get(t, "")))
        return frame.sort_values(["date", "ticker"]).reset_index(drop=True)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, horizon: Union[str, Horizon] = Horizon.THREE_MONTH,
                   signal_names: Optional[Sequence[str]] = None) -> "Panel":
        """Build a panel from a long frame with date, ticker, signal and return columns"""
        frame = frame.copy()
        frame["date"] = pd.to_datetime(frame["date"]).astype("datetime64[ns]")
        if signal_names is None:
            signal_names = [c for c in frame.columns if c not in ("date", "ticker", "sector", RETURN_LABEL)]
        sectors: Dict[str, str] = {}
        if "sector" in frame.columns:
            for ticker, sector in zip(frame["ticker"], frame["sector"]):
                if isinstance(sector, str) and sector and ticker not in sectors:
                    sectors[ticker] = sector
        frame = frame.sort_values(["date", "ticker"]).set_index(["date", "ticker"])
        if RETURN_LABEL not in frame.columns:
            frame[RETURN_LABEL] = np.nan
        values = frame[list(signal_names)].astype(float)
        returns = frame[RETURN_LABEL].astype(float)
        returns.name = RETURN_LABEL
        return cls(
            dates=tuple(sorted(set(values.index.get_level_values("date")))),
            companies=tuple(sorted(set(values.index.get_level_values("ticker")))),
            signal_names=tuple(signal_names),
            values=values,
            fwd_returns=returns,
            horizon=Horizon.parse(horizon),
            sectors=sectors,
        )

    def restrict(self, sectors: Optional[Iterable[str]] = None, start=None, end=None) -> "Panel":
        """Filter by sector and evaluation window; returns stay as computed on the full grid"""
        frame = self.to_frame()
        if sectors:
            wanted = {s.strip().lower() for s in sectors}
            frame = frame[frame["sector"].str.lower().isin(wanted)]
        if start is not None:
            frame = frame[frame["date"] >= pd.Timestamp(start)]
        if end is not None:
            frame = frame[frame["date"] <= pd.Timestamp(end)]
        if frame.empty:
            raise EmptyPanelError("No rows left after applying sector/date filters")
        restricted = Panel.from_frame(frame, self.horizon, self.signal_names)
        logger.info(f"🔎 Restricted panel to {restricted.n} companies x {restricted.T} dates")
        return restricted

    def equals(self, other: "Panel") -> bool:
        """Structural equality (used to check idempotent ingestion)"""
        return (
            self.dates == other.dates
            and self.companies == other.companies
            and self.signal_names == other.signal_names
            and self.horizon == other.horizon
            and dict(self.sectors) == dict(other.sectors)
            and self.values.equals(other.values)
            and self.fwd_returns.equals(other.fwd_returns)
        )


@dataclass(frozen=True)
class CrossSection:
    """One date's complete-case block: rows = companies (lexicographic)"""
    date: pd.Timestamp
    companies: Tuple[str, ...]
    labels: Tuple[str, ...]
    signal_matrix: np.ndarray
    returns: np.ndarray

    def __post_init__(self):
        rows = len(self.companies)
        if self.signal_matrix.shape != (rows, len(self.labels)) or self.returns.shape != (rows,):
            raise ValueError("CrossSection rows are not aligned with companies")
        if not (np.isfinite(self.signal_matrix).all() and np.isfinite(self.returns).all()):
            raise ValueError("CrossSection contains non-finite entries")

    @property
    def n(self) -> int:
        return len(self.companies)

    def column(self, label: str) -> np.ndarray:
        return self.signal_matrix[:, self.labels.index(label)]


# --- Loading ---------------------------------------------------------------

class PanelLoader:
    """
    Reads signal CSVs (`ticker,date,<signal>...`, optional `sector`) and a price
    CSV (`ticker,date,adj_close`) into a Panel.
    """

    PRICE_COLUMNS = ("ticker", "date", "adj_close")
    KEY_COLUMNS = ("ticker", "date")

    def __init__(self, aliases: Optional[Mapping[str, str]] = None,
                 sector_map: Optional[Mapping[str, str]] = None,
                 price_tolerance_days: int = 7):
        self.aliases = dict(DEFAULT_ALIASES)
        if aliases:
            self.aliases.update(aliases)
        self.sector_map = dict(sector_map or {})
        self.price_tolerance = pd.Timedelta(days=price_tolerance_days)

    def load(self, signal_source: Union[PathLike, Sequence[PathLike]], price_source: PathLike,
             horizon: Union[str, Horizon]) -> Panel:
        horizon = Horizon.parse(horizon)
        paths = [signal_source] if isinstance(signal_source, (str, Path)) else list(signal_source)
        if not paths:
            raise EmptyPanelError("No signal files given")

        frames = [self._read_signal_file(Path(p)) for p in paths]
        logger.info(f"📁 Loaded {len(frames)} signal file(s)")
        signals = self._combine(frames)
        if signals.empty:
            raise EmptyPanelError("Signal files contain zero usable dates")

        dates = tuple(sorted(signals["date"].unique()))
        companies = tuple(sorted(signals["ticker"].unique()))
        if len(dates) < 2 or len(companies) < 2:
            raise EmptyPanelError(
                f"Panel needs at least 2 dates and 2 companies, got {len(dates)} and {len(companies)}"
            )
        dates = tuple(pd.Timestamp(d) for d in dates)

        signal_names = [c for c in CANONICAL_SIGNALS if c in signals.columns]
        prices = self._read_price_file(Path(price_source))
        returns = self._forward_returns(signals[["date", "ticker"]], prices, dates, horizon)

        signals = signals.assign(**{RETURN_LABEL: returns})
        panel = Panel.from_frame(signals, horizon, signal_names)
        if not panel.sectors and self.sector_map:
            panel = Panel(panel.dates, panel.companies, panel.signal_names, panel.values,
                          panel.fwd_returns, panel.horizon,
                          {t: self.sector_map[t] for t in panel.companies if t in self.sector_map})
        logger.info(
            f"📊 Panel: {panel.n} companies x {panel.T} dates x {panel.m} signals "
            f"({int(panel.fwd_returns.notna().sum())} forward returns, horizon {horizon.value})"
        )
        return panel

    # signal files

    def _canonical_column(self, column: str, path: Path) -> str:
        name = column.strip()
        if name in CANONICAL_SIGNALS:
            return name
        if name.upper() in CANONICAL_SIGNALS:
            return name.upper()
        if name in self.aliases:
            return self.aliases[name]
        raise SchemaError(f"{path}: unknown signal column '{name}'", column=name)

    def _read_signal_file(self, path: Path) -> pd.DataFrame:
        raw = self._read_csv(path)
        header = [c.strip() for c in raw.columns]
        for position, expected in enumerate(self.KEY_COLUMNS):
            if len(header) <= position or header[position].lower() != expected:
                found = header[position] if len(header) > position else "<missing>"
                raise SchemaError(
                    f"{path}: column {position + 1} must be '{expected}', found '{found}'",
                    column=found,
                )
        rename = {raw.columns[0]: "ticker", raw.columns[1]: "date"}
        seen: Dict[str, str] = {}
        for original, name in zip(raw.columns[2:], header[2:]):
            if name.lower() == "sector":
                rename[original] = "sector"
                continue
            canonical = self._canonical_column(name, path)
            if canonical in seen:
                raise SchemaError(
                    f"{path}: columns '{seen[canonical]}' and '{name}' both map to {canonical}",
                    column=name,
                )
            seen[canonical] = name
            rename[original] = canonical
        frame = raw.rename(columns=rename)
        frame["ticker"] = frame["ticker"].str.strip()
        frame["date"] = self._parse_dates(frame["date"], path)

        empty = frame.index[frame["ticker"] == ""]
        if len(empty):
            raise DataError(f"{path}:{int(empty[0]) + 2}: empty ticker")

        unparseable = 0
        for name in seen:
            text = frame[name].str.strip()
            numbers = pd.to_numeric(text, errors="coerce")
            unparseable += int((numbers.isna() & (text != "")).sum())
            frame[name] = numbers.where(np.isfinite(numbers))
        if unparseable:
            logger.warning(f"⚠️ {path}: {unparseable} unparseable value(s) recorded as missing")
        frame["_source"] = [f"{path}:{i + 2}" for i in range(len(frame))]
        return frame

    def _combine(self, frames: List[pd.DataFrame]) -> pd.DataFrame:
        combined = pd.concat(frames, ignore_index=True, sort=False)
        duplicated = combined.duplicated(subset=["date", "ticker"], keep="first")
        if duplicated.any():
            row = combined[duplicated].iloc[0]
            raise DataError(
                f"{row['_source']}: duplicate row for {row['ticker']} at {row['date'].date()}"
            )
        combined = combined.drop(columns=["_source"])
        if "sector" in combined.columns:
            combined["sector"] = combined["sector"].fillna("").str.strip()
        return combined.sort_values(["date", "ticker"]).reset_index(drop=True)

    # prices and returns

    def _read_price_file(self, path: Path) -> pd.DataFrame:
        raw = self._read_csv(path)
        header = tuple(c.strip().lower() for c in raw.columns)
        for position, expected in enumerate(self.PRICE_COLUMNS):
            if len(header) <= position or header[position] != expected:
                found = header[position] if len(header) > position else "<missing>"
                raise SchemaError(
                    f"{path}: column {position + 1} must be '{expected}', found '{found}'",
                    column=found,
                )
        if len(header) > len(self.PRICE_COLUMNS):
            extra = raw.columns[len(self.PRICE_COLUMNS)].strip()
            raise SchemaError(f"{path}: unexpected column '{extra}'", column=extra)
        prices = raw.copy()
        prices.columns = list(self.PRICE_COLUMNS)
        prices["ticker"] = prices["ticker"].str.strip()
        prices["date"] = self._parse_dates(prices["date"], path)
        prices["adj_close"] = pd.to_numeric(prices["adj_close"].str.strip(), errors="coerce")
        prices = prices[np.isfinite(prices["adj_close"])]
        return prices.sort_values("date").reset_index(drop=True)

    def _price_at(self, keys: pd.DataFrame, prices: pd.DataFrame) -> np.ndarray:
        """Last price on or before each (ticker, target) within the tolerance"""
        result = np.full(len(keys), np.nan)
        valid = keys["target"].notna().to_numpy()
        if not valid.any() or prices.empty:
            return result
        left = keys[valid].assign(_row=np.flatnonzero(valid)).sort_values("target")
        merged = pd.merge_asof(
            left,
            prices.rename(columns={"date": "price_date"}),
            left_on="target",
            right_on="price_date",
            by="ticker",
            direction="backward",
            tolerance=self.price_tolerance,
        )
        result[merged["_row"].to_numpy()] = merged["adj_close"].to_numpy(dtype=float)
        return result

    def _forward_returns(self, keys: pd.DataFrame, prices: pd.DataFrame,
                         dates: Tuple[pd.Timestamp, ...], horizon: Horizon) -> np.ndarray:
        keys = keys.reset_index(drop=True)
        if horizon is Horizon.THREE_MONTH:
            # next date on the quarterly grid; the last date has no target
            following = dict(zip(dates, list(dates[1:]) + [pd.NaT]))
            targets = keys["date"].map(following)
        else:
            targets = keys["date"] + pd.DateOffset(months=1)
        start = self._price_at(pd.DataFrame({"ticker": keys["ticker"], "target": keys["date"]}), prices)
        end = self._price_at(pd.DataFrame({"ticker": keys["ticker"], "target": pd.to_datetime(targets)}), prices)
        with np.errstate(all="ignore"):
            returns = np.where(start > 0, (end - start) / start, np.nan)
        return np.where(np.isfinite(returns), returns, np.nan)

    # shared helpers

    @staticmethod
    def _read_csv(path: Path) -> pd.DataFrame:
        if not path.exists():
            raise DataError(f"File not found: {path}")
        try:
            return pd.read_csv(path, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError as e:
            raise EmptyPanelError(f"{path}: file is empty") from e
        except pd.errors.ParserError as e:
            raise DataError(f"{path}: {e}") from e

    @staticmethod
    def _parse_dates(column: pd.Series, path: Path) -> pd.Series:
        parsed = pd.to_datetime(column.str.strip(), format="%Y-%m-%d", errors="coerce")
        bad = parsed.index[parsed.isna()]
        if len(bad):
            line = int(bad[0]) + 2
            raise DataError(f"{path}:{line}: invalid ISO date '{column.iloc[int(bad[0])]}'")
        return parsed


def load_panel(signal_source: Union[PathLike, Sequence[PathLike]], price_source: PathLike,
               horizon: Union[str, Horizon] = Horizon.THREE_MONTH,
               aliases: Optional[Mapping[str, str]] = None,
               sector_map: Optional[Mapping[str, str]] = None) -> Panel:
    """Load and validate a panel; see PanelLoader"""
    return PanelLoader(aliases, sector_map).load(signal_source, price_source, horizon)


def load_sector_map(path: PathLike) -> Dict[str, str]:
    """ticker,sector CSV (e.g. the shipped data/sp500_sectors.csv)"""
    frame = PanelLoader._read_csv(Path(path))
    if [c.strip().lower() for c in frame.columns[:2]] != ["ticker", "sector"]:
        raise SchemaError(f"{path}: expected columns ticker,sector", column=frame.columns[0])
    return {t.strip(): s.strip() for t, s in zip(frame.iloc[:, 0], frame.iloc[:, 1])}


# --- Cross-sections and sampling -------------------------------------------

def cross_section(panel: Panel, date, signals: Sequence[Column]) -> CrossSection:
    """
    Complete-case block at one date: companies with finite values for every
    requested column (signal ids or alpha expressions) and a finite return.
    """
    frame = panel.frame_at(date)
    raw = frame[list(panel.signal_names)]
    labels: List[str] = []
    columns: List[np.ndarray] = []
    for item in signals:
        if isinstance(item, str):
            if item not in panel.signal_names:
                raise UnknownSignalError(item)
            series = raw[item]
        else:
            expr = item.expr if isinstance(item, AlphaDef) else item
            series = evaluate_frame(expr, raw)
        labels.append(column_label(item))
        columns.append(series.to_numpy(dtype=float))

    matrix = np.column_stack(columns) if columns else np.empty((len(frame), 0))
    returns = frame[RETURN_LABEL].to_numpy(dtype=float)
    keep = np.isfinite(matrix).all(axis=1) & np.isfinite(returns)
    count = int(keep.sum())
    required = len(labels) + 2
    if count < required:
        raise InsufficientCrossSectionError(pd.Timestamp(date).date(), count, required)
    return CrossSection(
        date=pd.Timestamp(date),
        companies=tuple(frame.index[keep]),
        labels=tuple(labels),
        signal_matrix=matrix[keep],
        returns=returns[keep],
    )


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def render_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Plain whitespace-aligned text table"""
    cells = [[_format_cell(v) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def sample_rows(panel: Panel, k: int, seed: int) -> str:
    """k random complete rows (company, date, signals, return) as a text table"""
    frame = panel.to_frame()
    required = list(panel.signal_names) + [RETURN_LABEL]
    complete = frame.dropna(subset=required).reset_index(drop=True)
    if k < 0 or k > len(complete):
        raise SampleSizeError(f"Cannot sample {k} rows from {len(complete)} complete rows")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(complete), size=k, replace=False))
    rows = [
        [row["ticker"], row["date"].strftime("%Y-%m-%d")] + [float(row[c]) for c in required]
        for _, row in complete.iloc[chosen].iterrows()
    ]
    return render_table(["company", "date"] + required, rows)


# --- Cache -----------------------------------------------------------------

class PanelCache:
    """Versioned parquet cache of a validated panel plus a JSON manifest"""

    SCHEMA_VERSION = 1
    DATA_FILE = "panel.parquet"
    MANIFEST_FILE = "panel_manifest.json"

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)

    @property
    def data_path(self) -> Path:
        return self.directory / self.DATA_FILE

    @property
    def manifest_path(self) -> Path:
        return self.directory / self.MANIFEST_FILE

    @staticmethod
    def content_hash(frame: pd.DataFrame) -> str:
        digest = hashlib.sha256()
        digest.update(",".join(map(str, frame.columns)).encode("utf-8"))
        digest.update(pd.util.hash_pandas_object(frame, index=False).to_numpy().tobytes())
        return digest.hexdigest()

    def manifest(self, panel: Panel) -> Dict:
        frame = panel.to_frame()
        return {
            "schema_version": self.SCHEMA_VERSION,
            "horizon": panel.horizon.value,
            "n_companies": panel.n,
            "n_dates": panel.T,
            "signal_names": list(panel.signal_names),
            "row_count": int(len(frame)),
            "date_span": [panel.dates[0].strftime("%Y-%m-%d"), panel.dates[-1].strftime("%Y-%m-%d")],
            "missing": panel.missing_tally(),
            "sectors": sorted(set(panel.sectors.values())),
            "content_hash": self.content_hash(frame),
        }

    def write(self, panel: Panel) -> Dict:
        manifest = self.manifest(panel)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            panel.to_frame().to_parquet(self.data_path, index=False)
            self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
        except OSError as e:
            raise OutputError(f"Cannot write panel cache in {self.directory}: {e}") from e
        logger.info(f"💾 Cached panel to {self.data_path}")
        return manifest

    def read(self) -> Panel:
        if not self.manifest_path.exists() or not self.data_path.exists():
            raise CacheError(f"No panel cache in {self.directory}; run 'alphadoc ingest' first")
        manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        version = manifest.get("schema_version")
        if version != self.SCHEMA_VERSION:
            raise CacheError(
                f"Panel cache schema version {version} does not match {self.SCHEMA_VERSION}; "
                "re-run 'alphadoc ingest'"
            )
        frame = pd.read_parquet(self.data_path)
        frame["sector"] = frame["sector"].fillna("")
        return Panel.from_frame(frame, manifest["horizon"], manifest["signal_names"])
