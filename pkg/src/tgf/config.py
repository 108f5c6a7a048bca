"""Plain-text ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored. Lists are comma separated.

    paths.sectors = data/sectors.csv
    paths.prices = data/prices
    study.start = 2007-01-01
    grid.seq_len = 5, 30
    graph.mode = returns
    optim.learning_rate = 0.005
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaViolation
from .graph import DEFAULT_THRESHOLDS, MODES
from .train import HORIZONS, SEQ_LENS, OptimSettings, SplitSpec

KNOWN_KEYS = {
    "paths.sectors", "paths.prices", "paths.ratios",
    "study.start", "study.end",
    "grid.seq_len", "grid.horizon", "grid.configs",
    "target",
    "graph.mode", "graph.threshold", "graph.absolute",
    "optim.learning_rate", "optim.weight_decay", "optim.batch_size", "optim.epochs", "optim.shuffle",
    "split.train_fraction",
    "seed",
}


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaViolation(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise SchemaViolation(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise SchemaViolation(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise SchemaViolation(f"not a boolean: {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise SchemaViolation(f"expected comma-separated integers, got {text!r}") from None


@dataclass
class ExperimentConfig:
    sectors: Path | None = None
    prices: Path | None = None
    ratios: Path | None = None
    study_start: dt.date = dt.date(2007, 1, 1)
    study_end: dt.date = dt.date(2024, 12, 30)
    grid: list[tuple[int, int]] = field(default_factory=lambda: [(s, h) for s in SEQ_LENS for h in HORIZONS])
    target: str = "offset"
    graph_mode: str = "returns"
    graph_threshold: float | None = None
    graph_absolute: bool = True
    optim: OptimSettings = field(default_factory=OptimSettings)
    split: SplitSpec = field(default_factory=SplitSpec)
    text: str = ""

    @property
    def seed(self) -> int:
        return self.optim.seed

    @property
    def threshold(self) -> float:
        return DEFAULT_THRESHOLDS[self.graph_mode] if self.graph_threshold is None else self.graph_threshold

    def snapshot(self) -> dict:
        return {
            "paths": {
                "sectors": str(self.sectors) if self.sectors else None,
                "prices": str(self.prices) if self.prices else None,
                "ratios": str(self.ratios) if self.ratios else None,
            },
            "study": {"start": self.study_start.isoformat(), "end": self.study_end.isoformat()},
            "grid": [list(g) for g in self.grid],
            "target": self.target,
            "graph": {"mode": self.graph_mode, "threshold": self.threshold, "absolute": self.graph_absolute},
            "optim": dict(self.optim.__dict__),
            "split": {"train_fraction": self.split.train_fraction},
            "seed": self.seed,
        }


def parse_config(text: str, base: Path | None = None) -> ExperimentConfig:
    """Parse config text; relative paths resolve against ``base``."""
    kv = parse_kv(text)
    base = base or Path(".")

    def path(key: str) -> Path | None:
        if key not in kv or not kv[key]:
            return None
        p = Path(kv[key])
        return p if p.is_absolute() else base / p

    def date(key: str, default: dt.date) -> dt.date:
        if key not in kv:
            return default
        try:
            return dt.date.fromisoformat(kv[key])
        except ValueError:
            raise SchemaViolation(f"{key}: bad date {kv[key]!r}") from None

    cfg = ExperimentConfig(text=text)
    cfg.sectors, cfg.prices, cfg.ratios = path("paths.sectors"), path("paths.prices"), path("paths.ratios")
    cfg.study_start = date("study.start", cfg.study_start)
    cfg.study_end = date("study.end", cfg.study_end)
    if "grid.configs" in kv:
        cfg.grid = []
        for item in kv["grid.configs"].split(","):
            item = item.strip().upper()
            try:
                sl, h = item.rstrip("D").split("SL")
                cfg.grid.append((int(sl), int(h)))
            except ValueError:
                raise SchemaViolation(f"grid.configs: bad id {item!r} (expected e.g. 5SL1D)") from None
    else:
        seqs = _ints(kv["grid.seq_len"]) if "grid.seq_len" in kv else list(SEQ_LENS)
        hors = _ints(kv["grid.horizon"]) if "grid.horizon" in kv else list(HORIZONS)
        cfg.grid = [(s, h) for s in seqs for h in hors]
    cfg.target = kv.get("target", cfg.target)
    if cfg.target not in ("offset", "path"):
        raise SchemaViolation(f"target must be 'offset' or 'path', got {cfg.target!r}")
    cfg.graph_mode = kv.get("graph.mode", cfg.graph_mode)
    if cfg.graph_mode not in MODES:
        raise SchemaViolation(f"graph.mode must be one of {MODES}")
    try:
        if "graph.threshold" in kv:
            cfg.graph_threshold = float(kv["graph.threshold"])
        if "graph.absolute" in kv:
            cfg.graph_absolute = _bool(kv["graph.absolute"])
        optim = {}
        for key, cast in (("learning_rate", float), ("weight_decay", float), ("batch_size", int),
                          ("epochs", int)):
            if f"optim.{key}" in kv:
                optim[key] = cast(kv[f"optim.{key}"])
        if "optim.shuffle" in kv:
            optim["shuffle"] = _bool(kv["optim.shuffle"])
        if "seed" in kv:
            optim["seed"] = int(kv["seed"])
        cfg.optim = OptimSettings(**optim)
        if "split.train_fraction" in kv:
            cfg.split = SplitSpec(float(kv["split.train_fraction"]))
    except ValueError as exc:
        raise SchemaViolation(f"bad config value: {exc}") from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise SchemaViolation(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), base=path.parent)
