"""Fixed stock graph: same-sector edges united with thresholded correlation edges."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateSeries, MissingTicker, SchemaViolation
from .ingest import RatioTable, SectorTable

MODES = ("returns", "ratios")
DEFAULT_THRESHOLDS = {"returns": 0.50, "ratios": 0.55}


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    mode: str


@dataclass(frozen=True)
class ComposedGraph:
    adjacency: np.ndarray
    normalized: np.ndarray
    threshold: float
    mode: str
    tickers: tuple[str, ...] = ()
    digest: str = field(default="", compare=False)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.adjacency, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.normalized, dtype=np.float64).tobytes())
        h.update(repr((self.threshold, self.mode, self.tickers)).encode())
        return h.hexdigest()

    def verify_unchanged(self) -> bool:
        return self.content_hash() == self.digest


@dataclass
class GraphDiagnostics:
    n_edges: int
    unconnected_nodes: list[str]
    degree_histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "n_edges": self.n_edges,
            "n_unconnected": len(self.unconnected_nodes),
            "unconnected_nodes": self.unconnected_nodes,
            "degree_histogram": {str(k): v for k, v in sorted(self.degree_histogram.items())},
        }


def sector_adjacency(sectors: SectorTable, order: Sequence[str]) -> np.ndarray:
    lookup = sectors.sector_of()
    missing = [t for t in order if t not in lookup]
    if missing:
        raise MissingTicker(f"tickers without a sector: {missing}")
    labels = [lookup[t] for t in order]
    n = len(labels)
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] == labels[j]:
                a[i, j] = a[j, i] = 1
    return a


def _pearson_rows(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    corr = (centered @ centered.T) / np.outer(norms, norms)
    corr = np.clip(corr, -1.0, 1.0)
    corr = 0.5 * (corr + corr.T)
    np.fill_diagonal(corr, 0.0)
    return corr


def pearson_returns_correlation(log_rets: np.ndarray) -> CorrelationMatrix:
    """Pearson correlation between the rows of an N x L return matrix."""
    x = np.asarray(log_rets, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 3:
        raise SchemaViolation("need an N x L matrix with L >= 3")
    if np.any(np.ptp(x, axis=1) == 0):
        raise DegenerateSeries("zero-variance return series")
    return CorrelationMatrix(_pearson_rows(x), "returns")


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks; ties share the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    ranks = np.empty(v.size)
    sorted_v = v[order]
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def normalize_ratio_columns(matrix: np.ndarray) -> np.ndarray:
    """Min-max scale each ratio across tickers so ranks compare like with like.

    A ratio that is constant across tickers maps to 0.
    """
    lo = matrix.min(axis=0)
    span = matrix.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (matrix - lo) / safe, 0.0)


def spearman_ratio_correlation(
    ratios: RatioTable, order: Sequence[str], normalize: bool = True
) -> CorrelationMatrix:
    missing = [t for t in order if t not in ratios.values]
    if missing:
        raise MissingTicker(f"tickers without ratios: {missing}")
    m = ratios.matrix(order)
    if not np.all(np.isfinite(m)):
        raise SchemaViolation("ratio table has missing cells for requested tickers")
    if normalize:
        m = normalize_ratio_columns(m)
    return spearman_rows(m)


def spearman_rows(matrix: np.ndarray) -> CorrelationMatrix:
    ranked = np.vstack([average_ranks(row) for row in np.asarray(matrix, dtype=np.float64)])
    if np.any(np.ptp(ranked, axis=1) == 0):
        raise DegenerateSeries("constant ratio vector")
    return CorrelationMatrix(_pearson_rows(ranked), "ratios")


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``."""
    a_hat = np.asarray(adjacency, dtype=np.float64) + np.eye(adjacency.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]


def compose(
    sector: np.ndarray,
    corr: CorrelationMatrix,
    threshold: float,
    absolute: bool = True,
    tickers: Sequence[str] = (),
) -> ComposedGraph:
    if not 0.0 < threshold < 1.0:
        raise SchemaViolation(f"threshold must lie in (0, 1), got {threshold}")
    strength = np.abs(corr.values) if absolute else corr.values
    a = ((np.asarray(sector) == 1) | (strength >= threshold)).astype(np.int64)
    np.fill_diagonal(a, 0)
    a = np.maximum(a, a.T)
    g = ComposedGraph(a, normalized_adjacency(a), float(threshold), corr.mode, tuple(tickers))
    object.__setattr__(g, "digest", g.content_hash())
    g.adjacency.flags.writeable = False
    g.normalized.flags.writeable = False
    return g


def identity_graph(n: int, tickers: Sequence[str] = ()) -> ComposedGraph:
    """Graph with no edges (every node isolated)."""
    return compose(np.zeros((n, n), dtype=np.int64), CorrelationMatrix(np.zeros((n, n)), "returns"), 0.999, tickers=tickers)


def diagnostics(g: ComposedGraph, order: Sequence[str]) -> GraphDiagnostics:
    degrees = g.adjacency.sum(axis=1)
    return GraphDiagnostics(
        n_edges=int(np.triu(g.adjacency, 1).sum()),
        unconnected_nodes=[t for t, d in zip(order, degrees) if d == 0],
        degree_histogram=dict(Counter(int(d) for d in degrees)),
    )


def export_graph(g: ComposedGraph, order: Sequence[str], directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src_ticker", "dst_ticker"])
        for i, j in zip(*np.nonzero(np.triu(g.adjacency, 1))):
            w.writerow([order[i], order[j]])
    with open(directory / "normalized.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", *order])
        for t, row in zip(order, g.normalized):
            w.writerow([t, *(repr(float(v)) for v in row)])
    report = diagnostics(g, order).to_dict()
    report.update(mode=g.mode, threshold=g.threshold, content_hash=g.digest)
    (directory / "diagnostics.json").write_text(json.dumps(report, indent=2) + "\n")


def build_graph(
    sectors: SectorTable,
    order: Sequence[str],
    mode: str,
    threshold: float | None = None,
    train_closes: np.ndarray | None = None,
    ratios: RatioTable | None = None,
    absolute: bool = True,
) -> ComposedGraph:
    """Compose the graph for ``mode`` from training-range data only."""
    if mode not in MODES:
        raise SchemaViolation(f"unknown graph mode {mode!r}; expected one of {MODES}")
    threshold = DEFAULT_THRESHOLDS[mode] if threshold is None else threshold
    sec = sector_adjacency(sectors, order)
    if mode == "returns":
        if train_closes is None:
            raise SchemaViolation("returns mode needs training-range closes")
        closes = np.asarray(train_closes, dtype=np.float64)
        corr = pearson_returns_correlation(np.log(closes[:, 1:] / closes[:, :-1]))
    else:
        if ratios is None:
            raise SchemaViolation("ratios mode needs a ratio table")
        corr = spearman_ratio_correlation(ratios, order)
    return compose(sec, corr, threshold, absolute=absolute, tickers=order)
