"""Shared constructed datasets for the tests."""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np

from tgf.ingest import RATIO_NAMES, PriceSeries, RatioTable, SectorRow, SectorTable
from tgf.synthetic import business_days


def cleaning_fixture(seed=0, n_days=60):
    """100 tickers with drops at every cleaning stage.

    17 tickers miss an endpoint of the window, 4 more carry a zero ratio, and
    6 dates are missing for at least one of the remaining 79 tickers.
    """
    rng = np.random.default_rng(seed)
    days = business_days(dt.date(2007, 1, 2), n_days)
    tickers = [f"C{i:03d}" for i in range(100)]
    sectors = SectorTable([SectorRow(t, f"Company {t}", f"Sector {i % 7}") for i, t in enumerate(tickers)])
    series, ratios = [], {}
    gap_days = [days[i] for i in (5, 11, 20, 33, 41, 50)]
    for i, t in enumerate(tickers):
        d = list(days)
        if i < 9:
            d = d[3 + i:]  # listed late
        elif i < 17:
            d = d[: n_days - 2 - (i - 9)]  # delisted early
        elif 21 <= i < 27:
            d.remove(gap_days[i - 21])  # one interior hole each
        closes = 10.0 * np.exp(np.cumsum(rng.normal(0, 0.01, len(d))))
        series.append(PriceSeries(t, d, closes))
        row = list(rng.uniform(0.5, 5.0, len(RATIO_NAMES)))
        if 17 <= i < 21:
            row[i % len(RATIO_NAMES)] = 0.0 if i % 2 else None
        ratios[t] = row
    return sectors, series, RatioTable(ratios), days


def write_inputs(directory: Path, sectors: SectorTable, series, ratios: RatioTable | None) -> None:
    directory = Path(directory)
    (directory / "prices").mkdir(parents=True, exist_ok=True)
    with open(directory / "sectors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ticker", "name", "sector"])
        for r in sectors.rows:
            w.writerow([r.ticker, r.name, r.sector])
    for s in series:
        with open(directory / "prices" / f"{s.ticker}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "close"])
            for d, c in zip(s.dates, s.closes):
                w.writerow([d.isoformat(), repr(float(c))])
    if ratios is not None:
        ratios.save(directory / "ratios.csv")


def head_only_toy(seed: int, n_samples: int = 320, n_nodes: int = 4, seq_len: int = 5):
    """Separable task: targets come from a teacher that shares the student's initial
    weights everywhere except the linear head, so a head update alone can fit them.

    Returns ``(config, a_hat, samples)``.
    """
    from tgf.graph import normalized_adjacency
    from tgf.model import A3TGCN, ModelConfig
    from tgf.train import Sample

    rng = np.random.default_rng(seed)
    adj = np.zeros((n_nodes, n_nodes), dtype=int)
    adj[0, 1] = adj[1, 0] = 1
    a_hat = normalized_adjacency(adj)
    cfg = ModelConfig(n_nodes=n_nodes, seq_len=seq_len, seed=seed)
    teacher = A3TGCN(cfg, a_hat)
    teacher.store.params["head.weight"][:] = rng.uniform(-1, 1, (16, 1))
    teacher.store.params["head.bias"][:] = 0.3
    x = rng.normal(size=(n_samples, seq_len, n_nodes, 8))
    y = teacher.predict(x)
    days = business_days(dt.date(2000, 1, 3), n_samples + seq_len)
    samples = [Sample(x[i], y[i], i + seq_len, days[i], (days[i + seq_len],)) for i in range(n_samples)]
    return cfg, a_hat, samples


def small_experiment(directory: Path, seed: int = 0, nodes: int = 5, steps: int = 200,
                     extra: str = "optim.epochs = 1\n") -> Path:
    """Write a tiny synthetic dataset with ``tgf synth`` and return its config path."""
    from tgf.cli import main

    directory = Path(directory)
    assert main(["synth", "--out", str(directory), "--seed", str(seed),
                 "--nodes", str(nodes), "--steps", str(steps)]) == 0
    config = directory / "config.txt"
    config.write_text(config.read_text() + extra)
    return config
