"""Seeded synthetic market: sector-correlated AR(1) log-price deviations.

Each stock's log price is a base level plus a fast and a slow AR(1) component.
Shocks share a sector factor, so same-sector stocks co-move and the
returns-correlation graph recovers the sectors.

The defaults switch the slow component off (``slow_sigma = 0``) and use a
moderately persistent fast component. With that setting the 5-step model's
test error grows steadily with the horizon across seeds.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .ingest import RATIO_NAMES, Panel, PriceSeries, RatioTable, SectorRow, SectorTable


@dataclass(frozen=True)
class SyntheticSpec:
    n_nodes: int = 20
    n_steps: int = 600
    n_sectors: int = 4
    fast_phi: float = 0.7
    fast_sigma: float = 0.02
    slow_phi: float = 0.98
    slow_sigma: float = 0.0
    sector_share: float = 0.6  # fraction of shock variance from the sector factor
    start: dt.date = dt.date(2007, 1, 2)


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def _ar1(rng: np.random.Generator, shocks: np.ndarray, phi: float) -> np.ndarray:
    """Stationary AR(1) driven by unit-variance ``shocks`` (N x T), started from its stationary law."""
    N, T = shocks.shape
    out = np.empty((N, T))
    out[:, 0] = rng.standard_normal(N) / np.sqrt(1.0 - phi * phi)
    for t in range(1, T):
        out[:, t] = phi * out[:, t - 1] + shocks[:, t]
    return out


def _sector_shocks(rng: np.random.Generator, membership: np.ndarray, n_sectors: int, T: int,
                   share: float) -> np.ndarray:
    common = rng.standard_normal((n_sectors, T))
    own = rng.standard_normal((membership.size, T))
    return np.sqrt(share) * common[membership] + np.sqrt(1.0 - share) * own


def synthetic_panel(seed: int = 0, spec: SyntheticSpec = SyntheticSpec()) -> Panel:
    rng = np.random.default_rng(seed)
    N, T = spec.n_nodes, spec.n_steps
    membership = np.arange(N) % spec.n_sectors
    fast = _ar1(rng, _sector_shocks(rng, membership, spec.n_sectors, T, spec.sector_share), spec.fast_phi)
    slow = _ar1(rng, _sector_shocks(rng, membership, spec.n_sectors, T, spec.sector_share), spec.slow_phi)
    base = np.log(rng.uniform(20.0, 200.0, size=N))
    log_price = base[:, None] + spec.fast_sigma * fast + spec.slow_sigma * slow
    tickers = [f"S{i:02d}" for i in range(N)]
    sectors = [f"Sector {chr(ord('A') + k)}" for k in membership]
    return Panel(tickers, business_days(spec.start, T), np.exp(log_price), sectors)


def synthetic_inputs(seed: int = 0, spec: SyntheticSpec = SyntheticSpec()
                     ) -> tuple[SectorTable, list[PriceSeries], RatioTable]:
    """The same market as raw loader inputs, plus a strictly nonzero ratio table."""
    panel = synthetic_panel(seed, spec)
    rng = np.random.default_rng(seed + 1)
    sectors = SectorTable([SectorRow(t, f"Company {t}", s) for t, s in zip(panel.tickers, panel.sectors)])
    ratios = RatioTable({t: list(rng.uniform(0.1, 10.0, size=len(RATIO_NAMES))) for t in panel.tickers})
    return sectors, panel.to_series(), ratios
