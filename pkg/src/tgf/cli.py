"""Command-line entry point: ``tgf <command> [options]``.

Commands mirror the pipeline stages (ingest, features, graph, experiment,
compare, curve, model describe) plus ``synth`` for a seeded demo dataset.
Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, errors
from .config import ExperimentConfig, load_config
from .errors import AlignmentError, DataError, SchemaViolation, TGFError
from .evaluation import RESULTS_HEADER, t_test_left
from .features import FeatureTensor, build_feature_tensor, warmup_length, write_summary
from .graph import DEFAULT_THRESHOLDS, MODES, build_graph, export_graph
from .ingest import (
    CleaningLog, Panel, clean_panel, load_panel, load_price_dir, load_ratios, load_sectors, save_panel,
)
from .model import A3TGCN, ModelConfig
from .synthetic import SyntheticSpec, synthetic_inputs
from .train import (
    RunRecord, SplitSpec, config_id, learning_curve, prepare, run_grid,
)

logger = logging.getLogger("tgf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad command-line usage (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits with 2 by default; 2 means data error here
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- helpers


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(args: argparse.Namespace, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("TGF_OUT", "tgf_out")) / default_name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _input_files(cfg: ExperimentConfig) -> list[Path]:
    files = []
    for p in (cfg.sectors, cfg.ratios):
        if p is not None:
            files.append(p)
    if cfg.prices is not None:
        files.extend(sorted(cfg.prices.glob("*.csv")) if cfg.prices.is_dir() else [cfg.prices])
    return files


def _ingest(cfg: ExperimentConfig, need_ratios: bool) -> tuple[Panel, CleaningLog, object]:
    if cfg.sectors is None or cfg.prices is None:
        raise SchemaViolation("config must set paths.sectors and paths.prices")
    if not cfg.prices.is_dir():
        raise SchemaViolation(f"prices directory not found: {cfg.prices}")
    sectors = load_sectors(cfg.sectors)
    series = load_price_dir(cfg.prices)
    ratios = load_ratios(cfg.ratios) if cfg.ratios is not None else None
    if need_ratios and ratios is None:
        raise SchemaViolation("ratios graph mode needs paths.ratios")
    panel, log = clean_panel(series, sectors, ratios, cfg.study_start, cfg.study_end)
    return panel, log, ratios


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg.optim = replace(cfg.optim, seed=args.seed)
    if getattr(args, "mode", None):
        cfg.graph_mode = args.mode
    if getattr(args, "threshold", None) is not None:
        cfg.graph_threshold = args.threshold
    return cfg


def _predictions_csv(path: Path, rec: RunRecord, path_target: bool) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if path_target:
            w.writerow(["date", "ticker", "step", "actual", "predicted"])
            for d, t, k, a, p in rec.predictions:
                w.writerow([d.isoformat(), t, k, repr(a), repr(p)])
        else:
            w.writerow(["date", "ticker", "actual", "predicted"])
            for d, t, _k, a, p in rec.predictions:
                w.writerow([d.isoformat(), t, repr(a), repr(p)])


def _loss_csv(path: Path, curve: list[float]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss"])
        for i, v in enumerate(curve, start=1):
            w.writerow([i, repr(v)])


def _failure_code(records: list[RunRecord]) -> int:
    failed = [r for r in records if not r.ok]
    if not failed:
        return EXIT_OK
    kinds = [getattr(errors, r.error_kind or "", None) for r in failed]
    if all(isinstance(k, type) and issubclass(k, DataError) for k in kinds):
        return EXIT_DATA
    return EXIT_NUMERIC


# ---------------------------------------------------------------- commands


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, "ingest")
    panel, log, _ = _ingest(cfg, need_ratios=False)
    out.mkdir(parents=True, exist_ok=True)
    save_panel(panel, out / "panel")
    report = log.report(cfg.study_start, cfg.study_end)
    (out / "cleaning_report.txt").write_text(report, encoding="utf-8")
    _write_json(out / "cleaning_log.json", log.to_dict())
    print(report, end="")
    return EXIT_OK


def cmd_features_build(args: argparse.Namespace) -> int:
    panel = load_panel(args.panel)
    out = _out_dir(args, "features")
    feature_dates = panel.dates[warmup_length():]
    if len(feature_dates) < 2:
        raise errors.InsufficientHistory("panel is shorter than the feature warm-up")
    boundary = SplitSpec(args.train_fraction).boundary(feature_dates)
    tensor, stats = build_feature_tensor(panel, (panel.dates[0], boundary))
    out.mkdir(parents=True, exist_ok=True)
    tensor.save(out / "features.npz")
    write_summary(tensor, out / "summary.json")
    _write_json(out / "normalization.json", stats.to_dict())
    print(f"wrote {out / 'features.npz'} shape={tensor.shape}")
    return EXIT_OK


def cmd_features_inspect(args: argparse.Namespace) -> int:
    tensor = FeatureTensor.load(args.path)
    n, f, t = tensor.shape
    print(f"{n} stocks x {f} features x {t} timestamps ({tensor.dates[0]} .. {tensor.dates[-1]})")
    print(f"{'feature':<8} {'mean':>12} {'std':>12} {'min':>12} {'max':>12}")
    for row in tensor.summary():
        print(f"{row['feature']:<8} {row['mean']:>12.6g} {row['std']:>12.6g} {row['min']:>12.6g} {row['max']:>12.6g}")
    return EXIT_OK


def cmd_graph_build(args: argparse.Namespace) -> int:
    panel = load_panel(args.panel)
    mode = args.mode or "returns"
    ratios = load_ratios(args.ratios) if args.ratios else None
    feature_dates = panel.dates[warmup_length():]
    if len(feature_dates) < 2:
        raise errors.InsufficientHistory("panel is shorter than the feature warm-up")
    # Same training range as the experiment runner: up to the split boundary on the feature axis.
    cut = panel.dates.index(SplitSpec(args.train_fraction).boundary(feature_dates)) + 1
    g = build_graph(panel.sector_table(), panel.tickers, mode, args.threshold,
                    train_closes=panel.closes[:, :cut], ratios=ratios)
    out = _out_dir(args, "graph")
    export_graph(g, panel.tickers, out)
    print(f"{mode} graph, threshold {g.threshold}: {int(g.adjacency.sum() // 2)} edges, hash {g.digest[:12]}")
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = _out_dir(args, "experiment")
    started = time.perf_counter()
    panel, log, ratios = _ingest(cfg, need_ratios=cfg.graph_mode == "ratios")
    prep = prepare(panel, cfg.graph_mode, cfg.threshold, ratios, cfg.split, cfg.graph_absolute)
    records = run_grid(panel, cfg.graph_mode, cfg.grid, cfg.optim, target=cfg.target, prep=prep)

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.text, encoding="utf-8")
    (out / "cleaning_report.txt").write_text(log.report(cfg.study_start, cfg.study_end), encoding="utf-8")
    export_graph(prep.graph, panel.tickers, out / "graph")
    summary = [RESULTS_HEADER]
    timing = {}
    for rec in records:
        run_dir = out / "runs" / rec.config_id
        run_dir.mkdir(parents=True, exist_ok=True)
        payload = rec.to_dict()
        timing[rec.config_id] = payload.pop("duration_s")
        _write_json(run_dir / "record.json", payload)
        if rec.ok:
            _loss_csv(run_dir / "loss_curve.csv", rec.loss_curve)
            _predictions_csv(run_dir / "predictions.csv", rec, cfg.target == "path")
            _write_json(run_dir / "metrics.json", rec.metrics.to_dict())
            rec.store.save(run_dir / "params.ckpt")
            summary.append(rec.metrics.table_row(rec.label))
        else:
            summary.append(f"{rec.label}: FAILED ({rec.error_kind}: {rec.error})")
    (out / "summary.txt").write_text("\n".join(summary) + "\n", encoding="utf-8")
    timing["total_s"] = time.perf_counter() - started
    _write_json(out / "timing.json", timing)

    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in (MANIFEST, "timing.json"))
    manifest = {
        "artifact": {"package": "tgf", "version": __version__, "numpy": np.__version__},
        "config": cfg.snapshot(),
        "config_sha256": hashlib.sha256(cfg.text.encode("utf-8")).hexdigest(),
        "seed": cfg.seed,
        "inputs": {str(p): sha256_file(p) for p in _input_files(cfg)},
        # Data-derived timestamps keep the manifest reproducible; wall-clock goes to timing.json.
        "timestamps": {
            "panel_start": panel.dates[0].isoformat(),
            "panel_end": panel.dates[-1].isoformat(),
            "train_boundary": prep.boundary.isoformat(),
        },
        "graph_hash": prep.graph.digest,
        "runs": {r.config_id: ("ok" if r.ok else f"failed: {r.error_kind}") for r in records},
        "outputs": {str(p.relative_to(out)): sha256_file(p) for p in outputs},
    }
    _write_json(out / MANIFEST, manifest)
    print("\n".join(summary))
    code = _failure_code(records)
    if code:
        n_bad = sum(not r.ok for r in records)
        print(f"{n_bad} of {len(records)} runs failed", file=sys.stderr)
    return code


def _read_predictions(run_dir: Path) -> dict[tuple[str, str, str], tuple[float, float]]:
    path = run_dir / "predictions.csv" if run_dir.is_dir() else run_dir
    if not path.exists():
        raise SchemaViolation(f"no predictions.csv in {run_dir}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = {}
        for rec in reader:
            key = (rec["date"], rec["ticker"], rec.get("step", "1"))
            rows[key] = (float(rec["actual"]), float(rec["predicted"]))
    return rows


def cmd_compare(args: argparse.Namespace) -> int:
    a = _read_predictions(Path(args.run_a))
    b = _read_predictions(Path(args.run_b))
    if a.keys() != b.keys():
        raise AlignmentError(
            f"prediction grids differ: {len(a.keys() - b.keys())} rows only in A, "
            f"{len(b.keys() - a.keys())} only in B"
        )
    keys = sorted(a)
    actual = np.array([a[k][0] for k in keys])
    if not np.array_equal(actual, np.array([b[k][0] for k in keys])):
        raise AlignmentError("runs disagree on actual values; they were not built from the same data")
    diffs = np.array([(a[k][1] - a[k][0]) ** 2 - (b[k][1] - b[k][0]) ** 2 for k in keys])
    if args.pairing == "date":
        by_date: dict[str, list[float]] = {}
        for k, d in zip(keys, diffs):
            by_date.setdefault(k[0], []).append(d)
        diffs = np.array([np.mean(v) for _, v in sorted(by_date.items())])
    result = t_test_left(diffs)
    print(f"A = {args.run_a}\nB = {args.run_b}\npairing = {args.pairing}")
    print(result.report(), end="")
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if args.years:
        first = dt.date(cfg.study_start.year, 1, 1)
        cfg.study_start = max(cfg.study_start, first)
        cfg.study_end = min(cfg.study_end, dt.date(cfg.study_start.year + args.years, 1, 1) - dt.timedelta(days=1))
    out = _out_dir(args, "curve")
    panel, _, ratios = _ingest(cfg, need_ratios=cfg.graph_mode == "ratios")
    prep = prepare(panel, cfg.graph_mode, cfg.threshold, ratios, cfg.split, cfg.graph_absolute)
    curve = learning_curve(prep, args.seq_len, args.horizon, cfg.optim, args.max_epochs,
                           args.patience, cfg.target)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_mae", "val_mae"])
        for epoch, tr, va in curve.rows():
            w.writerow([epoch, repr(tr), repr(va)])
    _write_json(out / "curve.json", {"config_id": config_id(args.seq_len, args.horizon),
                                     "best_epoch": curve.best_epoch,
                                     "epochs_run": len(curve.val_mae)})
    print(f"{config_id(args.seq_len, args.horizon)}: best epoch {curve.best_epoch} "
          f"of {len(curve.val_mae)} (val MAE {curve.val_mae[curve.best_epoch - 1]:.6f})")
    return EXIT_OK


def cmd_model_describe(args: argparse.Namespace) -> int:
    cfg = ModelConfig(n_nodes=args.nodes, seq_len=args.seq_len, horizon=args.horizon,
                      target=args.target, seed=args.seed or 0)
    model = A3TGCN(cfg, np.eye(args.nodes))
    print(model.describe())
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(n_nodes=args.nodes, n_steps=args.steps)
    seed = args.seed or 0
    sectors, series, ratios = synthetic_inputs(seed, spec)
    out = _out_dir(args, "synth")
    (out / "prices").mkdir(parents=True, exist_ok=True)
    with open(out / "sectors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "name", "sector"])
        for row in sectors.rows:
            w.writerow([row.ticker, row.name, row.sector])
    for s in series:
        with open(out / "prices" / f"{s.ticker}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "close"])
            for d, c in zip(s.dates, s.closes):
                w.writerow([d.isoformat(), repr(float(c))])
    ratios.save(out / "ratios.csv")
    first, last = series[0].dates[0], series[0].dates[-1]
    (out / "config.txt").write_text(
        "# seeded synthetic market\n"
        "paths.sectors = sectors.csv\n"
        "paths.prices = prices\n"
        "paths.ratios = ratios.csv\n"
        f"study.start = {first.isoformat()}\n"
        f"study.end = {last.isoformat()}\n"
        "grid.configs = 5SL1D, 5SL8D\n"
        "graph.mode = returns\n"
        f"seed = {seed}\n",
        encoding="utf-8",
    )
    print(f"wrote {len(series)} tickers x {spec.n_steps} days to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tgf", description="Temporal graph forecasting pipeline.")
    p.add_argument("--version", action="version", version=f"tgf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=False, mode=False):
        sp.add_argument("--out", help="output directory (default: $TGF_OUT/<command>)")
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", required=True, help="key = value config file")
        if mode:
            sp.add_argument("--mode", choices=MODES, default=None)
            sp.add_argument("--threshold", type=float, default=None,
                            help=f"correlation threshold (defaults {DEFAULT_THRESHOLDS})")

    sp = sub.add_parser("ingest", help="clean raw CSVs into a rectangular panel")
    common(sp, config=True)
    sp.set_defaults(func=cmd_ingest)

    feat = sub.add_parser("features", help="build or inspect feature tensors")
    fsub = feat.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = fsub.add_parser("build")
    common(sp)
    sp.add_argument("--panel", required=True, help="panel directory written by ingest")
    sp.add_argument("--train-fraction", type=float, default=0.9)
    sp.set_defaults(func=cmd_features_build)
    sp = fsub.add_parser("inspect")
    sp.add_argument("path", help="features.npz")
    sp.set_defaults(func=cmd_features_inspect)

    gr = sub.add_parser("graph", help="compose the stock graph")
    gsub = gr.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = gsub.add_parser("build")
    common(sp, mode=True)
    sp.add_argument("--panel", required=True)
    sp.add_argument("--ratios", default=None, help="ratio CSV (ratios mode)")
    sp.add_argument("--train-fraction", type=float, default=0.9)
    sp.set_defaults(func=cmd_graph_build)

    sp = sub.add_parser("experiment", help="run the configuration grid")
    common(sp, config=True, mode=True)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("compare", help="left-tailed t-test on paired squared errors")
    sp.add_argument("--run-a", required=True)
    sp.add_argument("--run-b", required=True)
    sp.add_argument("--pairing", choices=("observation", "date"), default="observation")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("curve", help="learning curve with validation MAE per epoch")
    common(sp, config=True, mode=True)
    sp.add_argument("--seq-len", type=int, default=5)
    sp.add_argument("--horizon", type=int, default=1)
    sp.add_argument("--max-epochs", type=int, default=20)
    sp.add_argument("--patience", type=int, default=None)
    sp.add_argument("--years", type=int, default=None, help="use only the first N calendar years")
    sp.set_defaults(func=cmd_curve)

    model = sub.add_parser("model", help="model utilities")
    msub = model.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sp = msub.add_parser("describe")
    sp.add_argument("--nodes", type=int, default=20)
    sp.add_argument("--seq-len", type=int, default=5)
    sp.add_argument("--horizon", type=int, default=1)
    sp.add_argument("--target", choices=("offset", "path"), default="offset")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_model_describe)

    sp = sub.add_parser("synth", help="write a seeded synthetic dataset and config")
    common(sp)
    sp.add_argument("--nodes", type=int, default=20)
    sp.add_argument("--steps", type=int, default=600)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"tgf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"tgf: data error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_DATA
    except TGFError as exc:
        print(f"tgf: numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"tgf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
