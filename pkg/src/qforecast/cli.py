"""Command-line entry point: generate-data, train, report, forecast.

Exit codes: 0 success, 2 config error, 3 data error, 4 run failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import data as qdata
from .config import build_id, dump_json, load_config, manifest, parse_seeds
from .data import DataConfig, DataError, Normalizer
from .models import DISPLAY_NAMES, KINDS, ConfigError, ModelConfig, build_model
from .train import (METRICS, WORKERS_ENV, RunFailure, load_checkpoint, predict, run_seeds,
                    save_checkpoint, summarize)

log = logging.getLogger("qforecast")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUN = 0, 2, 3, 4
DATASET_LABELS = {"lorenz": "Lorenz", "surrogate": "Surrogate", "csv": "CSV"}
REGIME_TITLES = {"ST": "Short-Term Forecasting", "LT": "Long-Term Forecasting"}
SUMMARY_KEYS = ("schema_version", "model", "regime", "dataset", "n_params") + METRICS


def parse_int_list(text: str, what: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {what} {text!r}") from exc
    if not vals:
        raise ConfigError(f"empty {what} list")
    return vals


# ---------------------------------------------------------------------------
# generate-data

def cmd_generate_data(args) -> int:
    if args.source == "lorenz":
        if args.channels not in (None, 3):
            raise ConfigError("the Lorenz system has exactly 3 channels")
        series = qdata.lorenz_generate(args.points or 1000, args.dt)
        cols = qdata.series_to_columns(series)
    else:
        if args.channels not in (None, len(qdata.ITER_CHANNELS)):
            raise ConfigError(f"the surrogate follows the {len(qdata.ITER_CHANNELS)}-channel schema "
                              f"{qdata.ITER_CHANNELS}")
        if args.points is not None and args.points < 1:
            raise ConfigError("--points must be >= 1")
        full = qdata.surrogate_generate(args.points or 4000, args.seed)
        keep = list(full) if args.raw else qdata.ITER_CHANNELS
        cols = {k: full[k] for k in keep}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    qdata.write_csv(out, cols)
    log.info("wrote %d rows x %d columns to %s", len(next(iter(cols.values()))), len(cols), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train

def _checkpoint_header(cfg, seed: int, model, dataset) -> dict:
    return {
        "build": build_id(),
        "experiment": cfg.spec.name,
        "seed": seed,
        "model": model.config.to_dict(),
        "data": cfg.spec.data.to_dict(),
        "channel_names": dataset.channel_names,
        "normalizer": dataset.normalizer.to_dict(),
    }


def write_curves(path: Path, records):
    """Wide CSV: epoch, then validation RMSE per seed (epoch 0 = before training)."""
    n = max(len(r.epochs) for r in records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + [f"seed_{r.seed}" for r in records])
        for e in range(n + 1):
            row = [e]
            for r in records:
                if e == 0:
                    row.append(repr(r.initial["rmse"]))
                else:
                    row.append(repr(r.epochs[e - 1].rmse) if e <= len(r.epochs) else "")
            w.writerow(row)


def cmd_train(args) -> int:
    seeds = parse_seeds(args.seeds) if args.seeds else None
    cfg = load_config(args.config, seeds, args.out)
    out = cfg.output_dir
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "records").mkdir(exist_ok=True)
        (out / "checkpoints").mkdir(exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    dump_json(manifest(cfg), out / "manifest.json")

    dataset = qdata.load_dataset(cfg.spec.data)
    log.info("%s: %d train / %d val windows, %d seed(s)", cfg.spec.name, dataset.n_train,
             dataset.n_windows - dataset.n_train, len(cfg.spec.seeds))
    try:
        results = run_seeds(cfg.spec, dataset)
    except Exception as exc:  # noqa: BLE001 - surfaced with context and exit code 4
        raise RunFailure(f"{cfg.spec.name}: training crashed: {exc!r}") from exc

    records = [r for r, _ in results]
    for record, model in results:
        dump_json(record.to_dict(with_timing=False), out / "records" / f"seed_{record.seed}.json")
        save_checkpoint(out / "checkpoints" / f"seed_{record.seed}.npz", model.state_dict(),
                        _checkpoint_header(cfg, record.seed, model, dataset))
    write_curves(out / "curves.csv", records)
    summary = summarize(cfg.spec, records, results[0][1].breakdown())
    dump_json(summary, out / "summary.json")

    failed = [r for r in records if r.failed]
    if failed:
        msg = "; ".join(f"seed {r.seed}: {r.error}" for r in failed)
        raise RunFailure(f"{len(failed)} of {len(records)} seed(s) failed ({msg}); outputs in {out}")
    if summary["rmse"]["mean"] is not None:
        print(f"{cfg.spec.name}: rmse {summary['rmse']['mean']:.4g} +- {summary['rmse']['sd']:.2g} "
              f"over {len(records)} seed(s), {summary['n_params']} params -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report

def load_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.json"
    try:
        s = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing = [k for k in SUMMARY_KEYS if k not in s]
    if missing:
        raise DataError(f"malformed summary {path}: missing {missing}")
    for m in METRICS:
        if not isinstance(s[m], dict) or "mean" not in s[m] or "sd" not in s[m]:
            raise DataError(f"malformed summary {path}: {m} needs mean and sd")
    if s["regime"] not in REGIME_TITLES or s["model"] not in KINDS:
        raise DataError(f"malformed summary {path}: unknown regime or model")
    return s


def build_table(summaries: list[dict]) -> tuple[list[str], list[tuple[str, dict]]]:
    """Datasets in first-seen order and (regime, {model: {dataset: summary}}) sections."""
    datasets = []
    for s in summaries:
        if s["dataset"] not in datasets:
            datasets.append(s["dataset"])
    sections = []
    for regime in REGIME_TITLES:
        cells: dict[str, dict] = {}
        for s in summaries:
            if s["regime"] == regime:
                if s["dataset"] in cells.get(s["model"], {}):
                    log.warning("duplicate %s %s %s run; keeping the later one", regime, s["model"], s["dataset"])
                cells.setdefault(s["model"], {})[s["dataset"]] = s
        if cells:
            ordered = {k: cells[k] for k in KINDS if k in cells}
            sections.append((regime, ordered))
    return datasets, sections


def _fmt(stat: dict | None) -> str:
    if stat is None or stat.get("mean") is None:
        return "n/a"
    return f"{stat['mean']:.4g} ± {stat['sd']:.2g}"


def render_text(datasets, sections) -> str:
    labels = [DATASET_LABELS.get(d, d) for d in datasets]
    header = ["Model"] + [f"{m.upper()} {lab}" for m in METRICS for lab in labels] + \
             [f"#Params {lab}" for lab in labels]
    rows = []
    for regime, cells in sections:
        rows.append([REGIME_TITLES[regime]])
        for kind, by_ds in cells.items():
            row = [DISPLAY_NAMES[kind]]
            for m in METRICS:
                row += [_fmt(by_ds[d][m]) if d in by_ds else "n/a" for d in datasets]
            row += [str(by_ds[d]["n_params"]) if d in by_ds else "n/a" for d in datasets]
            rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows if len(r) > 1 and i < len(r)) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        if len(r) == 1:
            lines.append(f"-- {r[0]} --")
        else:
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines)


def write_table_csv(path, datasets, sections):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["regime", "model"]
        for m in METRICS:
            for d in datasets:
                cols += [f"{m}_{d}_mean", f"{m}_{d}_sd"]
        cols += [f"n_params_{d}" for d in datasets]
        w.writerow(cols)
        for regime, cells in sections:
            for kind, by_ds in cells.items():
                row = [regime, kind]
                for m in METRICS:
                    for d in datasets:
                        stat = by_ds[d][m] if d in by_ds else {"mean": None, "sd": None}
                        row += ["" if stat["mean"] is None else repr(stat["mean"]),
                                "" if stat["sd"] is None else repr(stat["sd"])]
                row += [by_ds[d]["n_params"] if d in by_ds else "" for d in datasets]
                w.writerow(row)


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    summaries = [load_summary(r) for r in args.runs]
    datasets, sections = build_table(summaries)
    print(render_text(datasets, sections))
    if args.out:
        write_table_csv(args.out, datasets, sections)
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast

def cmd_forecast(args) -> int:
    header, params = load_checkpoint(args.checkpoint)
    try:
        mcfg = ModelConfig.from_dict(header["model"])
        dcfg = DataConfig.from_dict(header["data"])
        norm = Normalizer.from_dict(header["normalizer"])
        names = list(header["channel_names"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"checkpoint header is incomplete: {exc!r}") from exc
    model = build_model(mcfg)
    model.load_state_dict(params)

    horizons = parse_int_list(args.horizons, "horizons") if args.horizons else list(range(1, mcfg.S + 1))
    bad = [h for h in horizons if not 1 <= h <= mcfg.S]
    if bad:
        raise ConfigError(f"horizons {bad} outside 1..{mcfg.S}")

    if args.data:
        dcfg = DataConfig.from_dict({**dcfg.to_dict(), "source": "csv", "path": args.data})
    series = qdata.load_series(dcfg)
    if series.n_channels != mcfg.C:
        raise DataError(f"checkpoint expects {mcfg.C} channels {names}, "
                        f"dataset has {series.n_channels} {series.channel_names}")
    if series.channel_names != names:
        raise DataError(f"channel mismatch: checkpoint {names}, dataset {series.channel_names}")
    ds = qdata.make_windows(series, mcfg.T, mcfg.S, dcfg.target, dcfg.split, dcfg.mode, normalizer=norm)

    Xva, _ = ds.val
    starts = ds.starts[ds.n_train:]
    pred = predict(model, Xva)  # (N, S, C_out), normalized
    out_idx = [ds.target_channel] if ds.target_channel is not None else list(range(mcfg.C))
    cols = {"t": starts + mcfg.T}
    for j, c in enumerate(out_idx):
        for h in horizons:
            rows = starts + mcfg.T + h - 1
            cols[f"{names[c]}_true_h{h}"] = series.values[rows, c]
            cols[f"{names[c]}_pred_h{h}"] = pred[:, h - 1, j] * norm.scale[c] + norm.offset[c]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    qdata.write_csv(out, cols, fmt="%.10g")
    log.info("wrote %d forecast rows to %s", len(starts), out)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qforecast", description=__doc__.splitlines()[0],
                                epilog=f"Seed jobs run in parallel worker processes; set {WORKERS_ENV}=N.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="write a Lorenz or surrogate CSV")
    g.add_argument("--source", choices=("lorenz", "surrogate"), default="lorenz")
    g.add_argument("--points", type=int, default=None, help="rows (default 1000 lorenz, 4000 surrogate)")
    g.add_argument("--dt", type=float, default=0.01, help="Euler step for lorenz")
    g.add_argument("--channels", type=int, default=None, help="expected channel count (3 or 7)")
    g.add_argument("--seed", type=int, default=0, help="surrogate RNG seed")
    g.add_argument("--raw", action="store_true", help="surrogate: also write timestamp and operating_state")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate_data)

    t = sub.add_parser("train", help="run every seed of an experiment config")
    t.add_argument("--config", required=True, help="YAML config or a manifest.json from an earlier run")
    t.add_argument("--seeds", default=None, help="override seeds, e.g. 0-9 or 0,3,5")
    t.add_argument("--out", default=None, help="override output directory")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("report", help="merge run summaries into a comparison table")
    r.add_argument("runs", nargs="*", help="run directories containing summary.json")
    r.add_argument("--out", default=None, help="also write the table as CSV")
    r.set_defaults(func=cmd_report)

    f = sub.add_parser("forecast", help="denormalized validation forecasts from a checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", default=None, help="CSV to forecast on (default: the training data source)")
    f.add_argument("--horizons", default=None, help="comma-separated steps, e.g. 1,12,24 (default: all)")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_forecast)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RunFailure as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
