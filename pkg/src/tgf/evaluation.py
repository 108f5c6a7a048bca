"""Forecast error metrics, R^2 and the left-tailed one-sample t-test."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlignmentError, DegenerateSample, EmptyInput
from .stats import t_cdf, t_ppf

MRE_EPS = 1e-8


@dataclass
class MetricsReport:
    mae: float
    mse: float
    rmse: float
    mre: float
    n: int
    mre_excluded: int = 0
    per_node_mae: list[float] = field(default_factory=list)
    squared_errors: np.ndarray = field(default_factory=lambda: np.empty(0), repr=False)

    def to_dict(self, include_errors: bool = False) -> dict:
        d = asdict(self)
        d.pop("squared_errors")
        if include_errors:
            d["squared_errors"] = self.squared_errors.tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_row(self, label: str) -> str:
        return f"{label:<20} {self.mae:8.4f} {self.mse:8.4f} {self.rmse:8.4f} {100 * self.mre:7.2f}%"


RESULTS_HEADER = f"{'Version':<20} {'MAE':>8} {'MSE':>8} {'RMSE':>8} {'MRE':>8}"


def metrics(pred, actual, eps: float = MRE_EPS) -> MetricsReport:
    """MAE, MSE, RMSE and MRE.

    MRE divides by the prediction, ``|v - v_hat| / |v_hat|``; terms whose
    prediction is smaller than ``eps`` in magnitude are skipped and counted in
    ``mre_excluded``. 2-D inputs are read as ``samples x nodes`` and also give
    per-node MAE.
    """
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise AlignmentError(f"prediction shape {p.shape} != actual shape {a.shape}")
    if p.size == 0:
        raise EmptyInput("no observations")
    err = a - p
    abs_err = np.abs(err)
    sq = err * err
    mse = float(sq.mean())
    keep = np.abs(p) >= eps
    mre = float((abs_err[keep] / np.abs(p[keep])).mean()) if keep.any() else float("nan")
    per_node = abs_err.mean(axis=0).tolist() if p.ndim == 2 else []
    return MetricsReport(
        mae=float(abs_err.mean()),
        mse=mse,
        rmse=math.sqrt(mse),
        mre=mre,
        n=int(p.size),
        mre_excluded=int((~keep).sum()),
        per_node_mae=per_node,
        squared_errors=sq.ravel(),
    )


def r_squared(pred, actual) -> float:
    p = np.asarray(pred, dtype=np.float64).ravel()
    a = np.asarray(actual, dtype=np.float64).ravel()
    if p.shape != a.shape:
        raise AlignmentError("prediction/actual length mismatch")
    if a.size < 2:
        raise EmptyInput("R^2 needs at least 2 observations")
    ss_tot = float(((a - a.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DegenerateSample("actual values are constant")
    ss_res = float(((a - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass
class TTestResult:
    mean_diff: float
    t_stat: float
    p_value: float
    ci95_low: float
    ci95_high: float
    df: int
    n: int
    std: float

    def to_dict(self) -> dict:
        return asdict(self)

    def report(self) -> str:
        p = "<0.00001" if self.p_value < 1e-5 else f"{self.p_value:.5f}"
        head = f"{'Mean':>12} {'T-test':>10} {'P-value':>10} {'95% CI low':>12} {'95% CI high':>12}"
        row = (f"{self.mean_diff:>12.7f} {self.t_stat:>10.4f} {p:>10} "
               f"{self.ci95_low:>12.7f} {self.ci95_high:>12.7f}")
        return "\n".join([
            "One-sample t-test results",
            head,
            row,
            "H0: mean = 0",
            "HA: mean < 0",
            f"(n = {self.n}, df = {self.df}, p = {self.p_value:.6g})",
        ]) + "\n"


def t_test_left(diffs: Sequence[float], confidence: float = 0.95) -> TTestResult:
    """One-sample t-test of ``mean < 0`` with a two-sided confidence interval."""
    d = np.asarray(diffs, dtype=np.float64).ravel()
    n = d.size
    if n < 2:
        raise DegenerateSample("t-test needs at least 2 differences")
    mean = float(d.mean())
    s = float(d.std(ddof=1))
    if s == 0.0:
        raise DegenerateSample("differences have zero variance")
    se = s / math.sqrt(n)
    t = mean / se
    df = n - 1
    crit = t_ppf(0.5 + confidence / 2.0, df)
    return TTestResult(
        mean_diff=mean,
        t_stat=t,
        p_value=t_cdf(t, df),
        ci95_low=mean - crit * se,
        ci95_high=mean + crit * se,
        df=df,
        n=n,
        std=s,
    )


def paired_squared_error_diffs(pred_a, pred_b, actual) -> np.ndarray:
    """``(a - v)^2 - (b - v)^2`` per observation."""
    a = np.asarray(pred_a, dtype=np.float64)
    b = np.asarray(pred_b, dtype=np.float64)
    v = np.asarray(actual, dtype=np.float64)
    if not (a.shape == b.shape == v.shape):
        raise AlignmentError("runs must share the same observation grid")
    return ((a - v) ** 2 - (b - v) ** 2).ravel()
