"""Per-stock node features: RSI, MACD, four annualized log returns, z-scored and raw log returns."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadWindow, DegenerateSeries, InsufficientHistory, SchemaViolation
from .ingest import Panel

FEATURE_NAMES: tuple[str, ...] = ("RSI", "MACD", "ALR1W", "ALR2W", "ALR1M", "ALR2M", "NormR", "LogR")
ALR_WINDOWS: dict[str, int] = {"ALR1W": 5, "ALR2W": 10, "ALR1M": 21, "ALR2M": 42}
TRADING_DAYS = 252
RSI_PERIOD = 14
MACD_FAST = 12
MACD_SLOW = 26


def log_returns(closes: Sequence[float]) -> np.ndarray:
    p = np.asarray(closes, dtype=np.float64)
    if p.size < 2:
        raise InsufficientHistory("log returns need at least 2 prices")
    if np.any(p <= 0):
        raise SchemaViolation("prices must be positive")
    return np.log(p[1:] / p[:-1])


def annualized_log_return(closes: Sequence[float], window_days: int) -> np.ndarray:
    """``(252 / w) * ln(P_t / P_{t-w})``, NaN for the first ``w`` entries."""
    if window_days not in ALR_WINDOWS.values():
        raise BadWindow(f"window {window_days} not in {sorted(ALR_WINDOWS.values())}")
    p = np.asarray(closes, dtype=np.float64)
    if p.size <= window_days:
        raise InsufficientHistory(f"need more than {window_days} prices")
    out = np.full(p.size, np.nan)
    out[window_days:] = (TRADING_DAYS / window_days) * np.log(p[window_days:] / p[:-window_days])
    return out


def rsi(closes: Sequence[float], period: int = RSI_PERIOD) -> np.ndarray:
    """Wilder RSI. The first ``period`` entries are NaN.

    The first average is the simple mean of the first ``period`` changes; after
    that ``avg = (avg * (period - 1) + x) / period``. A flat window (no gains and
    no losses) reads 50.
    """
    p = np.asarray(closes, dtype=np.float64)
    if p.size <= period:
        raise InsufficientHistory(f"RSI({period}) needs more than {period} prices")
    delta = np.diff(p)
    gains = np.where(delta > 0, delta, 0.0)
    losses = np.where(delta < 0, -delta, 0.0)
    out = np.full(p.size, np.nan)
    avg_g = gains[:period].mean()
    avg_l = losses[:period].mean()
    out[period] = _rsi_value(avg_g, avg_l)
    for t in range(period + 1, p.size):
        avg_g = (avg_g * (period - 1) + gains[t - 1]) / period
        avg_l = (avg_l * (period - 1) + losses[t - 1]) / period
        out[t] = _rsi_value(avg_g, avg_l)
    return out


def _rsi_value(avg_gain: float, avg_loss: float) -> float:
    if avg_loss == 0.0:
        return 50.0 if avg_gain == 0.0 else 100.0
    if avg_gain == 0.0:
        return 0.0
    return 100.0 - 100.0 / (1.0 + avg_gain / avg_loss)


def ema(values: Sequence[float], span: int) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    alpha = 2.0 / (span + 1)
    out = np.empty_like(x)
    acc = x[0]
    for i, v in enumerate(x):
        acc = acc + alpha * (v - acc) if i else v
        out[i] = acc
    return out


def macd(closes: Sequence[float], fast: int = MACD_FAST, slow: int = MACD_SLOW) -> np.ndarray:
    """MACD line only (no signal line); both EMAs start at the first price."""
    p = np.asarray(closes, dtype=np.float64)
    if p.size == 0:
        raise InsufficientHistory("MACD needs at least one price")
    return ema(p, fast) - ema(p, slow)


@dataclass
class NormalizationStats:
    """Per-ticker statistics fitted on the training dates only."""

    tickers: list[str]
    close_min: np.ndarray
    close_max: np.ndarray
    ret_mean: np.ndarray
    ret_std: np.ndarray
    fit_start: dt.date
    fit_end: dt.date

    def normalize_close(self, closes: np.ndarray) -> np.ndarray:
        """Min-max scale an N x T close matrix with the fitted per-ticker bounds."""
        lo = self.close_min[:, None]
        return (closes - lo) / (self.close_max[:, None] - lo)

    def to_dict(self) -> dict:
        return {
            "tickers": self.tickers,
            "close_min": self.close_min.tolist(),
            "close_max": self.close_max.tolist(),
            "ret_mean": self.ret_mean.tolist(),
            "ret_std": self.ret_std.tolist(),
            "fit_start": self.fit_start.isoformat(),
            "fit_end": self.fit_end.isoformat(),
        }


def fit_normalization(panel: Panel, fit_range: tuple[dt.date, dt.date]) -> NormalizationStats:
    start, end = fit_range
    idx = [j for j, d in enumerate(panel.dates) if start <= d <= end]
    if len(idx) < 3:
        raise InsufficientHistory("fit range must cover at least 3 dates")
    if idx != list(range(idx[0], idx[-1] + 1)):
        raise SchemaViolation("fit range must be contiguous")
    closes = panel.closes[:, idx[0] : idx[-1] + 1]
    rets = np.log(closes[:, 1:] / closes[:, :-1])
    stats = NormalizationStats(
        tickers=list(panel.tickers),
        close_min=closes.min(axis=1),
        close_max=closes.max(axis=1),
        ret_mean=rets.mean(axis=1),
        ret_std=rets.std(axis=1),
        fit_start=panel.dates[idx[0]],
        fit_end=panel.dates[idx[-1]],
    )
    flat = [t for t, lo, hi, s in zip(panel.tickers, stats.close_min, stats.close_max, stats.ret_std)
            if not (hi > lo and s > 0)]
    if flat:
        raise DegenerateSeries(f"constant close over the fit range: {flat}")
    return stats


def normalized_returns(log_rets: Sequence[float], mean: float, std: float) -> np.ndarray:
    """Z-score returns with externally fitted statistics (population std)."""
    if not std > 0:
        raise DegenerateSeries("std must be positive")
    return (np.asarray(log_rets, dtype=np.float64) - mean) / std


def warmup_length(rsi_period: int = RSI_PERIOD, slow: int = MACD_SLOW) -> int:
    return max(max(ALR_WINDOWS.values()), rsi_period, slow)


@dataclass
class FeatureTensor:
    values: np.ndarray  # N x 8 x T'
    tickers: list[str]
    dates: list[dt.date]
    names: tuple[str, ...] = field(default=FEATURE_NAMES)

    def __post_init__(self) -> None:
        n, f, t = self.values.shape
        if (n, f, t) != (len(self.tickers), len(self.names), len(self.dates)):
            raise SchemaViolation(f"tensor shape {self.values.shape} inconsistent with labels")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def summary(self) -> list[dict]:
        rows = []
        for k, name in enumerate(self.names):
            v = self.values[:, k, :]
            rows.append({
                "feature": name,
                "mean": float(v.mean()),
                "std": float(v.std()),
                "min": float(v.min()),
                "max": float(v.max()),
            })
        return rows

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(
                fh,
                values=self.values,
                tickers=np.array(self.tickers),
                dates=np.array([d.isoformat() for d in self.dates]),
                names=np.array(self.names),
            )

    @classmethod
    def load(cls, path: str | Path) -> "FeatureTensor":
        with np.load(path) as z:
            return cls(
                values=z["values"],
                tickers=[str(t) for t in z["tickers"]],
                dates=[dt.date.fromisoformat(str(d)) for d in z["dates"]],
                names=tuple(str(n) for n in z["names"]),
            )


def ticker_features(closes: np.ndarray, mean: float, std: float) -> np.ndarray:
    """8 x T feature matrix for one ticker, NaN where a feature is undefined."""
    T = closes.size
    out = np.full((len(FEATURE_NAMES), T), np.nan)
    out[0] = rsi(closes)
    out[1] = macd(closes)
    for k, name in enumerate(("ALR1W", "ALR2W", "ALR1M", "ALR2M"), start=2):
        out[k] = annualized_log_return(closes, ALR_WINDOWS[name])
    lr = log_returns(closes)
    out[6, 1:] = normalized_returns(lr, mean, std)
    out[7, 1:] = lr
    return out


def build_feature_tensor(
    panel: Panel, fit_range: tuple[dt.date, dt.date]
) -> tuple[FeatureTensor, NormalizationStats]:
    warmup = warmup_length()
    N, T = panel.shape
    if T <= warmup:
        raise InsufficientHistory(f"panel has {T} dates, warm-up needs more than {warmup}")
    stats = fit_normalization(panel, fit_range)
    values = np.empty((N, len(FEATURE_NAMES), T - warmup))
    for i in range(N):
        full = ticker_features(panel.closes[i], stats.ret_mean[i], stats.ret_std[i])
        values[i] = full[:, warmup:]
    if not np.all(np.isfinite(values)):
        raise DegenerateSeries("non-finite feature after warm-up trim")
    return FeatureTensor(values, list(panel.tickers), list(panel.dates[warmup:])), stats


def target_matrix(panel: Panel, stats: NormalizationStats) -> np.ndarray:
    """Min-max normalized closes aligned with the feature tensor's date axis."""
    return stats.normalize_close(panel.closes)[:, warmup_length():]


def write_summary(tensor: FeatureTensor, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tensor.summary(), indent=2) + "\n")
