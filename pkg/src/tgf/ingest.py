"""CSV loaders and the three-step cleaning pipeline that yields a rectangular panel."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateTicker, EmptyPanel, SchemaViolation

logger = logging.getLogger(__name__)

RATIO_NAMES: tuple[str, ...] = (
    "currentRatio",
    "quickRatio",
    "profitMargins",
    "grossMargins",
    "operatingMargins",
    "returnOnAssets",
    "returnOnEquity",
    "priceToBook",
    "trailingPE",
    "forwardPE",
    "enterpriseToRevenue",
    "enterpriseToEbitda",
    "debtToEquity",
    "revenueGrowth",
    "earningsGrowth",
    "revenuePerShare",
    "payoutRatio",
    "trailingAnnualDividendYield",
    "fiveYearAvgDividendYield",
    "52WeekChange",
    "beta",
    "totalRevenue",
    "totalDebt",
    "totalCash",
    "sharesOutstanding",
    "bookValue",
    "trailingEps",
    "forwardEps",
)

SECTOR_HEADER = ["ticker", "name", "sector"]
PRICE_HEADER = ["date", "close"]


@dataclass(frozen=True)
class SectorRow:
    ticker: str
    name: str
    sector: str


@dataclass
class SectorTable:
    rows: list[SectorRow] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for row in self.rows:
            if row.ticker in seen:
                raise DuplicateTicker(f"duplicate ticker {row.ticker!r}")
            if not row.sector.strip():
                raise SchemaViolation(f"empty sector for {row.ticker!r}")
            seen.add(row.ticker)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def tickers(self) -> list[str]:
        return [r.ticker for r in self.rows]

    def sector_of(self) -> dict[str, str]:
        return {r.ticker: r.sector for r in self.rows}


@dataclass
class PriceSeries:
    ticker: str
    dates: list[dt.date]
    closes: np.ndarray

    def __post_init__(self) -> None:
        self.closes = np.asarray(self.closes, dtype=np.float64)
        if len(self.dates) != len(self.closes):
            raise SchemaViolation(f"{self.ticker}: dates/closes length mismatch")
        if np.any(~(self.closes > 0)):
            raise SchemaViolation(f"{self.ticker}: closes must be strictly positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise SchemaViolation(f"{self.ticker}: dates must be strictly increasing")

    def __len__(self) -> int:
        return len(self.dates)


@dataclass
class RatioTable:
    """Per-ticker fundamental ratios; ``None`` marks an absent cell."""

    values: dict[str, list[float | None]] = field(default_factory=dict)
    names: tuple[str, ...] = RATIO_NAMES

    def __post_init__(self) -> None:
        for ticker, row in self.values.items():
            if len(row) != len(self.names):
                raise SchemaViolation(
                    f"{ticker}: expected {len(self.names)} ratios, got {len(row)}"
                )

    def is_missing(self, ticker: str) -> bool:
        row = self.values.get(ticker)
        if row is None:
            return True
        return any(v is None or v == 0.0 or not np.isfinite(v) for v in row)

    def matrix(self, order: Sequence[str]) -> np.ndarray:
        out = np.empty((len(order), len(self.names)))
        for i, t in enumerate(order):
            row = self.values[t]
            out[i] = [np.nan if v is None else v for v in row]
        return out

    def save(self, path: str | Path) -> None:
        """Write the table in the format :func:`load_ratios` reads; absent cells are empty."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ticker", *self.names])
            for ticker, row in self.values.items():
                w.writerow([ticker, *("" if v is None else repr(float(v)) for v in row)])


@dataclass
class Panel:
    tickers: list[str]
    dates: list[dt.date]
    closes: np.ndarray  # N x T
    sectors: list[str]

    def __post_init__(self) -> None:
        self.closes = np.asarray(self.closes, dtype=np.float64)
        if self.closes.shape != (len(self.tickers), len(self.dates)):
            raise SchemaViolation(
                f"closes shape {self.closes.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if len(self.sectors) != len(self.tickers):
            raise SchemaViolation("one sector per ticker required")

    @property
    def shape(self) -> tuple[int, int]:
        return self.closes.shape

    def to_series(self) -> list[PriceSeries]:
        return [PriceSeries(t, list(self.dates), self.closes[i].copy()) for i, t in enumerate(self.tickers)]

    def sector_table(self) -> SectorTable:
        return SectorTable([SectorRow(t, t, s) for t, s in zip(self.tickers, self.sectors)])


@dataclass
class CleaningLog:
    initial_companies: int
    initial_observations: int
    incomplete_companies: int
    incomplete_observations: int
    missing_ratio_companies: int
    missing_ratio_observations: int
    dropped_dates: int
    dropped_date_observations: int
    final_companies: int
    final_observations: int
    dropped_tickers: dict[str, list[str]] = field(default_factory=dict)

    def reconciles(self) -> bool:
        dropped = (
            self.incomplete_observations
            + self.missing_ratio_observations
            + self.dropped_date_observations
        )
        return self.initial_observations - dropped == self.final_observations

    def to_dict(self) -> dict:
        return asdict(self)

    def report(self, start: dt.date | None = None, end: dt.date | None = None) -> str:
        span = f" from {start.year}-{end.year}" if start and end else ""
        rows = [
            (f"Initial population{span}", f"{self.initial_companies}", f"{self.initial_observations:,}"),
            (
                "Less: companies without complete data for the period",
                f"({self.incomplete_companies})",
                f"({self.incomplete_observations:,})",
            ),
            (
                "Less: companies missing ratios from the database",
                f"({self.missing_ratio_companies})",
                f"({self.missing_ratio_observations:,})",
            ),
            (
                "Less: dates where at least 1 company had a missing day",
                "-",
                f"({self.dropped_date_observations:,})",
            ),
            (
                "Number of observations in the final population",
                f"{self.final_companies}",
                f"{self.final_observations:,}",
            ),
        ]
        w = max(len(r[0]) for r in rows)
        lines = [f"{'':<{w}}  {'Companies':>10}  {'Observations':>14}"]
        for label, c, o in rows:
            lines.append(f"{label:<{w}}  {c:>10}  {o:>14}")
        lines.append(f"(dates removed: {self.dropped_dates})")
        return "\n".join(lines) + "\n"


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise SchemaViolation(f"{path}: missing header") from None
        got = [h.strip() for h in got]
        if got[: len(header)] != header or len(got) != len(header):
            raise SchemaViolation(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        return [row for row in reader if row and any(c.strip() for c in row)]


def load_sectors(path: str | Path) -> SectorTable:
    rows = []
    for rec in _read_csv(Path(path), SECTOR_HEADER):
        if len(rec) != 3:
            raise SchemaViolation(f"{path}: malformed row {rec!r}")
        ticker, name, sector = (c.strip() for c in rec)
        if not ticker:
            raise SchemaViolation(f"{path}: empty ticker")
        rows.append(SectorRow(ticker, name, sector))
    return SectorTable(rows)


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise SchemaViolation(f"{where}: unparseable date {text!r}") from None


def load_price_file(path: str | Path, ticker: str | None = None) -> PriceSeries:
    path = Path(path)
    ticker = ticker or path.stem
    obs = []
    for rec in _read_csv(path, PRICE_HEADER):
        if len(rec) != 2:
            raise SchemaViolation(f"{path}: malformed row {rec!r}")
        d = _parse_date(rec[0], str(path))
        try:
            close = float(rec[1])
        except ValueError:
            raise SchemaViolation(f"{path}: bad close {rec[1]!r}") from None
        if not close > 0 or not np.isfinite(close):
            raise SchemaViolation(f"{path}: non-positive close {close} on {d}")
        obs.append((d, close))
    obs.sort(key=lambda o: o[0])
    return PriceSeries(ticker, [o[0] for o in obs], np.array([o[1] for o in obs], dtype=np.float64))


def load_prices(paths: Iterable[str | Path]) -> list[PriceSeries]:
    """One series per file; the ticker is the file stem (``prices/BP.L.csv`` -> ``BP.L``)."""
    return [load_price_file(p) for p in paths]


def load_price_dir(directory: str | Path) -> list[PriceSeries]:
    directory = Path(directory)
    if not directory.is_dir():
        raise SchemaViolation(f"prices directory not found: {directory}")
    return load_prices(sorted(directory.glob("*.csv")))


def load_ratios(path: str | Path) -> RatioTable:
    header = ["ticker", *RATIO_NAMES]
    values: dict[str, list[float | None]] = {}
    for rec in _read_csv(Path(path), header):
        if len(rec) != len(header):
            raise SchemaViolation(f"{path}: malformed row for {rec[0]!r}")
        ticker = rec[0].strip()
        if ticker in values:
            raise DuplicateTicker(f"duplicate ticker {ticker!r} in {path}")
        row: list[float | None] = []
        for cell in rec[1:]:
            cell = cell.strip()
            if cell == "" or cell.lower() in ("nan", "none", "null"):
                row.append(None)
            else:
                try:
                    row.append(float(cell))
                except ValueError:
                    raise SchemaViolation(f"{path}: bad ratio {cell!r} for {ticker}") from None
        values[ticker] = row
    return RatioTable(values)


def clean_panel(
    series: Sequence[PriceSeries],
    sectors: SectorTable,
    ratios: RatioTable | None,
    study_start: dt.date,
    study_end: dt.date,
) -> tuple[Panel, CleaningLog]:
    """Apply the three removal steps in order and return the rectangular panel.

    The population is the sector table. A ticker is complete when its history
    reaches both the first and the last trading day seen in the window; a sector
    ticker without a price series counts as incomplete. Observations are counted inside the study window only.
    Passing ``ratios=None`` skips the ratio step (returns-only graphs need no ratios).
    """
    if not study_start < study_end:
        raise SchemaViolation("study_start must precede study_end")
    by_ticker = {s.ticker: s for s in series}
    extra = sorted(set(by_ticker) - set(sectors.tickers))
    if extra:
        logger.warning("ignoring %d price series without a sector row: %s", len(extra), extra)

    # Endpoints are the first/last trading days any ticker has inside the window,
    # so a holiday study_start does not disqualify everyone.
    in_window = [d for t in sectors.tickers if t in by_ticker for d in by_ticker[t].dates
                 if study_start <= d <= study_end]
    first_day = min(in_window, default=study_start)
    last_day = max(in_window, default=study_end)

    windowed: dict[str, tuple[list[dt.date], np.ndarray, bool]] = {}
    for ticker in sectors.tickers:
        s = by_ticker.get(ticker)
        if s is None or len(s) == 0:
            windowed[ticker] = ([], np.empty(0), False)
            continue
        complete = s.dates[0] <= first_day and s.dates[-1] >= last_day
        keep = [i for i, d in enumerate(s.dates) if study_start <= d <= study_end]
        windowed[ticker] = ([s.dates[i] for i in keep], s.closes[keep], complete)

    initial_obs = sum(len(w[0]) for w in windowed.values())
    dropped: dict[str, list[str]] = {"incomplete": [], "missing_ratios": []}

    survivors = []
    incomplete_obs = 0
    for ticker in sectors.tickers:
        dates, _, complete = windowed[ticker]
        if complete:
            survivors.append(ticker)
        else:
            dropped["incomplete"].append(ticker)
            incomplete_obs += len(dates)

    ratio_obs = 0
    if ratios is not None:
        kept = []
        for ticker in survivors:
            if ratios.is_missing(ticker):
                dropped["missing_ratios"].append(ticker)
                ratio_obs += len(windowed[ticker][0])
            else:
                kept.append(ticker)
        survivors = kept

    if not survivors:
        raise EmptyPanel("no ticker survived cleaning")

    calendars = [set(windowed[t][0]) for t in survivors]
    common = set.intersection(*calendars)
    union = set.union(*calendars)
    bad_dates = union - common
    date_obs = sum(len(c & bad_dates) for c in calendars)
    if not common:
        raise EmptyPanel("no date is shared by all surviving tickers")

    dates = sorted(common)
    closes = np.empty((len(survivors), len(dates)))
    for i, ticker in enumerate(survivors):
        tdates, tcloses, _ = windowed[ticker]
        lookup = dict(zip(tdates, tcloses))
        closes[i] = [lookup[d] for d in dates]

    sector_of = sectors.sector_of()
    panel = Panel(survivors, dates, closes, [sector_of[t] for t in survivors])
    log = CleaningLog(
        initial_companies=len(sectors),
        initial_observations=initial_obs,
        incomplete_companies=len(dropped["incomplete"]),
        incomplete_observations=incomplete_obs,
        missing_ratio_companies=len(dropped["missing_ratios"]),
        missing_ratio_observations=ratio_obs,
        dropped_dates=len(bad_dates),
        dropped_date_observations=date_obs,
        final_companies=len(survivors),
        final_observations=closes.size,
        dropped_tickers=dropped,
    )
    return panel, log


def save_panel(panel: Panel, directory: str | Path) -> None:
    """Write ``closes.csv`` (wide, one column per ticker) and ``sectors.csv``.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "closes.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", *panel.tickers])
        for j, d in enumerate(panel.dates):
            w.writerow([d.isoformat(), *(repr(float(v)) for v in panel.closes[:, j])])
    with open(directory / "sectors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SECTOR_HEADER)
        for t, s in zip(panel.tickers, panel.sectors):
            w.writerow([t, t, s])


def load_panel(directory: str | Path) -> Panel:
    directory = Path(directory)
    if not (directory / "closes.csv").exists():
        raise SchemaViolation(f"no panel found in {directory}")
    with open(directory / "closes.csv", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "date":
            raise SchemaViolation(f"{directory}/closes.csv: bad header")
        tickers = header[1:]
        dates, cols = [], []
        for rec in reader:
            dates.append(_parse_date(rec[0], str(directory)))
            cols.append([float(v) for v in rec[1:]])
    sectors = load_sectors(directory / "sectors.csv").sector_of()
    closes = np.array(cols, dtype=np.float64).T.reshape(len(tickers), len(dates))
    return Panel(tickers, dates, closes, [sectors[t] for t in tickers])
