"""Windowed samples, chronological split, Adam training, the configuration grid and the learning curve."""

from __future__ import annotations

import datetime as dt
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import ParameterStore, Tape
from .errors import DegenerateSplit, DivergenceDetected, InsufficientHistory, SchemaViolation, TGFError
from .evaluation import MetricsReport, metrics
from .features import FeatureTensor, build_feature_tensor, target_matrix, warmup_length
from .graph import ComposedGraph, build_graph
from .ingest import Panel, RatioTable, SectorTable
from .model import A3TGCN, ModelConfig

logger = logging.getLogger(__name__)

SEQ_LENS = (5, 30)
HORIZONS = (1, 2, 3, 8)


def config_id(seq_len: int, horizon: int) -> str:
    return f"{seq_len}SL{horizon}D"


def version_label(seq_len: int, horizon: int) -> str:
    """``Version k (5SL1D)`` numbering in grid order; off-grid configs get no number."""
    cid = config_id(seq_len, horizon)
    grid = default_grid()
    if (seq_len, horizon) in grid:
        return f"Version {grid.index((seq_len, horizon)) + 1} ({cid})"
    return cid


def default_grid() -> list[tuple[int, int]]:
    return [(s, h) for s in SEQ_LENS for h in HORIZONS]


@dataclass
class Sample:
    x: np.ndarray  # seq_len x N x F
    y: np.ndarray  # N x n_outputs
    anchor: int  # index of the first timestamp after the input window
    input_start: dt.date
    target_dates: tuple[dt.date, ...]

    @property
    def target_date(self) -> dt.date:
        return self.target_dates[-1]


def make_samples(features: FeatureTensor, targets: np.ndarray, seq_len: int, horizon: int,
                 target: str = "offset") -> list[Sample]:
    """One sample per anchor ``t`` in ``[seq_len, T' - horizon]``.

    Inputs are timestamps ``t - seq_len .. t - 1``; the offset target is the
    value at ``t + horizon - 1``, the path target covers ``t .. t + horizon - 1``.
    """
    values = features.values
    N, F, T = values.shape
    if targets.shape != (N, T):
        raise SchemaViolation(f"targets {targets.shape} do not match tensor ({N}, {T})")
    if seq_len < 1 or horizon < 1:
        raise SchemaViolation("seq_len and horizon must be >= 1")
    if T <= seq_len + horizon - 1:
        raise InsufficientHistory(f"{T} timestamps cannot hold seq_len={seq_len} + horizon={horizon}")
    by_time = np.transpose(values, (2, 0, 1))  # T x N x F
    dates = features.dates
    out = []
    for t in range(seq_len, T - horizon + 1):
        if target == "offset":
            idx = [t + horizon - 1]
        elif target == "path":
            idx = list(range(t, t + horizon))
        else:
            raise SchemaViolation(f"unknown target mode {target!r}")
        out.append(Sample(
            x=by_time[t - seq_len : t],
            y=targets[:, idx],
            anchor=t,
            input_start=dates[t - seq_len],
            target_dates=tuple(dates[i] for i in idx),
        ))
    return out


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.90

    def boundary_index(self, n_dates: int) -> int:
        """Index of the last training date on an axis of ``n_dates`` dates."""
        if not 0.0 < self.train_fraction < 1.0:
            raise SchemaViolation("train_fraction must lie in (0, 1)")
        k = int(math.floor(self.train_fraction * n_dates))
        if k < 1 or k >= n_dates:
            raise DegenerateSplit(f"{n_dates} dates cannot be split at {self.train_fraction}")
        return k - 1

    def boundary(self, dates: Sequence[dt.date]) -> dt.date:
        return dates[self.boundary_index(len(dates))]


def chrono_split(samples: Sequence[Sample], boundary: dt.date) -> tuple[list[Sample], list[Sample]]:
    """Train: every target on or before ``boundary``. Test: the whole input window after it.

    Samples with a test-range target whose inputs reach back over the boundary are dropped.
    """
    if any(b.anchor <= a.anchor for a, b in zip(samples, samples[1:])):
        raise SchemaViolation("samples must be in date order")
    train = [s for s in samples if s.target_date <= boundary]
    test = [s for s in samples if s.input_start > boundary]
    if not train or not test:
        raise DegenerateSplit(f"split at {boundary} leaves {len(train)} train / {len(test)} test samples")
    return train, test


@dataclass(frozen=True)
class OptimSettings:
    learning_rate: float = 0.005
    weight_decay: float = 0.00001
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shuffle: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise SchemaViolation("learning rate and weight decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise SchemaViolation("batch_size and epochs must be >= 1")


class Adam:
    """Adam with L2 weight decay added to the gradient before the moment updates."""

    def __init__(self, store: ParameterStore, settings: OptimSettings):
        self.store = store
        self.s = settings
        self.m = {k: np.zeros_like(v) for k, v in store.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.items()}
        self.t = 0

    def step(self) -> None:
        s = self.s
        self.t += 1
        c1 = 1.0 - s.beta1 ** self.t
        c2 = 1.0 - s.beta2 ** self.t
        for name, theta in self.store.items():
            g = self.store.grads[name] + s.weight_decay * theta
            m = self.m[name]
            v = self.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            theta -= s.learning_rate * (m / c1) / (np.sqrt(v / c2) + s.eps)


def stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([s.x for s in samples]), np.stack([s.y for s in samples])


def batches(n: int, size: int, order: np.ndarray | None = None) -> Iterable[np.ndarray]:
    idx = np.arange(n) if order is None else order
    for start in range(0, n, size):
        yield idx[start : start + size]


def dataset_loss(model: A3TGCN, samples: Sequence[Sample], batch_size: int = 64) -> float:
    """Mean squared error over every node-output of every sample."""
    total, count = 0.0, 0
    for b in batches(len(samples), batch_size):
        x, y = stack([samples[i] for i in b])
        pred = model.predict(x)
        total += float(((pred - y) ** 2).sum())
        count += y.size
    return total / count


def predict_samples(model: A3TGCN, samples: Sequence[Sample], batch_size: int = 64) -> np.ndarray:
    """Predictions shaped ``S x N x n_outputs``."""
    parts = []
    for b in batches(len(samples), batch_size):
        x, _ = stack([samples[i] for i in b])
        parts.append(model.predict(x))
    return np.concatenate(parts, axis=0)


def train_loop(model: A3TGCN, samples: Sequence[Sample], settings: OptimSettings,
               on_epoch: Callable[[int, float], bool | None] | None = None) -> list[float]:
    """Train in place; returns the mean batch loss of each epoch.

    ``on_epoch(epoch, loss)`` runs after each epoch; returning True stops early.
    """
    if not samples:
        raise DegenerateSplit("empty training set")
    opt = Adam(model.store, settings)
    rng = np.random.default_rng(settings.seed)
    curve = []
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(samples)) if settings.shuffle else None
        total, count = 0.0, 0
        for b in batches(len(samples), settings.batch_size, order):
            x, y = stack([samples[i] for i in b])
            model.store.zero_grad()
            tape = Tape()
            loss = model.loss(tape, x, y)
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}, batch starting {int(b[0])}")
            tape.backward(loss, model.store)
            opt.step()
            total += value * len(b)
            count += len(b)
        curve.append(total / count)
        logger.debug("epoch %d loss %.6g", epoch, curve[-1])
        if on_epoch is not None and on_epoch(epoch, curve[-1]):
            break
    return curve


@dataclass
class Prepared:
    """Everything a run needs that does not depend on (seq_len, horizon)."""

    panel: Panel
    tensor: FeatureTensor
    targets: np.ndarray
    graph: ComposedGraph
    boundary: dt.date
    split: SplitSpec


def prepare(panel: Panel, mode: str = "returns", threshold: float | None = None,
            ratios: RatioTable | None = None, split: SplitSpec = SplitSpec(),
            absolute: bool = True, sectors: SectorTable | None = None) -> Prepared:
    """Features, targets and the fixed graph, all fitted on training dates only."""
    warmup = warmup_length()
    if panel.shape[1] <= warmup + 1:
        raise InsufficientHistory(f"panel has {panel.shape[1]} dates; warm-up alone needs {warmup}")
    feature_dates = panel.dates[warmup:]
    boundary = split.boundary(feature_dates)
    tensor, stats = build_feature_tensor(panel, (panel.dates[0], boundary))
    targets = target_matrix(panel, stats)
    cut = panel.dates.index(boundary) + 1
    graph = build_graph(
        sectors or panel.sector_table(), panel.tickers, mode, threshold,
        train_closes=panel.closes[:, :cut], ratios=ratios, absolute=absolute,
    )
    return Prepared(panel, tensor, targets, graph, boundary, split)


@dataclass
class RunRecord:
    config_id: str
    label: str
    seq_len: int
    horizon: int
    seed: int
    loss_curve: list[float] = field(default_factory=list)
    metrics: MetricsReport | None = None
    duration_s: float = 0.0
    n_train: int = 0
    n_test: int = 0
    error: str | None = None
    error_kind: str | None = None
    predictions: list[tuple] = field(default_factory=list, repr=False)
    store: ParameterStore | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "config_id": self.config_id,
            "label": self.label,
            "seq_len": self.seq_len,
            "horizon": self.horizon,
            "seed": self.seed,
            "loss_curve": self.loss_curve,
            "metrics": self.metrics.to_dict() if self.metrics else None,
            "duration_s": self.duration_s,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "error": self.error,
            "error_kind": self.error_kind,
        }


def run_single(prep: Prepared, seq_len: int, horizon: int, settings: OptimSettings,
               target: str = "offset") -> RunRecord:
    record = RunRecord(config_id(seq_len, horizon), version_label(seq_len, horizon),
                       seq_len, horizon, settings.seed)
    started = time.perf_counter()
    samples = make_samples(prep.tensor, prep.targets, seq_len, horizon, target)
    train, test = chrono_split(samples, prep.boundary)
    cfg = ModelConfig(n_nodes=len(prep.panel.tickers), seq_len=seq_len, horizon=horizon,
                      target=target, seed=settings.seed)
    model = A3TGCN(cfg, prep.graph)
    record.loss_curve = train_loop(model, train, settings)
    if not prep.graph.verify_unchanged():
        raise SchemaViolation("graph mutated during training")
    pred = predict_samples(model, test)
    actual = np.stack([s.y for s in test])
    S, N, K = pred.shape
    record.metrics = metrics(pred.transpose(0, 2, 1).reshape(S * K, N),
                             actual.transpose(0, 2, 1).reshape(S * K, N))
    for s, p in zip(test, pred):
        for k, d in enumerate(s.target_dates):
            for i, ticker in enumerate(prep.panel.tickers):
                record.predictions.append((d, ticker, k + 1, float(s.y[i, k]), float(p[i, k])))
    record.n_train, record.n_test = len(train), len(test)
    record.store = model.store
    record.duration_s = time.perf_counter() - started
    return record


def run_grid(panel: Panel, mode: str = "returns", grid: Sequence[tuple[int, int]] | None = None,
             settings: OptimSettings = OptimSettings(), threshold: float | None = None,
             ratios: RatioTable | None = None, target: str = "offset",
             split: SplitSpec = SplitSpec(), prep: Prepared | None = None) -> list[RunRecord]:
    """Train and test every (seq_len, horizon) pair; failed runs are recorded, not raised."""
    grid = list(grid) if grid is not None else default_grid()
    if not grid:
        raise SchemaViolation("empty configuration grid")
    prep = prep or prepare(panel, mode, threshold, ratios, split)
    records = []
    for seq_len, horizon in grid:
        try:
            rec = run_single(prep, seq_len, horizon, settings, target)
        except TGFError as exc:
            logger.warning("run %s failed: %s", config_id(seq_len, horizon), exc)
            rec = RunRecord(config_id(seq_len, horizon), version_label(seq_len, horizon),
                            seq_len, horizon, settings.seed, error=str(exc),
                            error_kind=type(exc).__name__)
        records.append(rec)
    return records


@dataclass
class LearningCurve:
    train_mae: list[float]
    val_mae: list[float]
    best_epoch: int  # 1-based; first minimum of val_mae

    def rows(self) -> list[tuple[int, float, float]]:
        return [(i + 1, t, v) for i, (t, v) in enumerate(zip(self.train_mae, self.val_mae))]


def learning_curve(prep: Prepared, seq_len: int, horizon: int, settings: OptimSettings,
                   max_epochs: int, patience: int | None = None, target: str = "offset") -> LearningCurve:
    """Train epoch by epoch, scoring MAE on the tail 10% of the training range.

    Test-range samples are never touched.
    """
    if max_epochs < 1:
        raise SchemaViolation("max_epochs must be >= 1")
    samples = make_samples(prep.tensor, prep.targets, seq_len, horizon, target)
    train, _ = chrono_split(samples, prep.boundary)
    train_dates = [d for d in prep.tensor.dates if d <= prep.boundary]
    val_boundary = prep.split.boundary(train_dates)
    fit, val = chrono_split(train, val_boundary)
    cfg = ModelConfig(n_nodes=len(prep.panel.tickers), seq_len=seq_len, horizon=horizon,
                      target=target, seed=settings.seed)
    model = A3TGCN(cfg, prep.graph)
    fit_y = np.stack([s.y for s in fit])
    val_y = np.stack([s.y for s in val])
    train_mae: list[float] = []
    val_mae: list[float] = []

    def score(epoch: int, _loss: float) -> bool:
        train_mae.append(float(np.abs(predict_samples(model, fit) - fit_y).mean()))
        val_mae.append(float(np.abs(predict_samples(model, val) - val_y).mean()))
        best = int(np.argmin(val_mae))
        return patience is not None and len(val_mae) - 1 - best >= patience

    train_loop(model, fit, replace(settings, epochs=max_epochs), on_epoch=score)
    return LearningCurve(train_mae, val_mae, int(np.argmin(val_mae)) + 1)
