"""Command-line surface: ingest, train, generate, evaluate, export-plots.

Every command is deterministic given identical inputs and seed: all file
writes are atomic (temp + rename), JSON is emitted with sorted keys, floats
are formatted with shortest round-trip repr, and all randomness flows from
the explicit seed through named streams.

Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import dataset, dcn, gaussian, iqn, metrics, scengen
from .config import RunConfig, load_config
from .errors import CheckpointFormatError, ConfigError, DcqnError
from .dataset import CsvSchema, DatasetSplit, FeatureStats, ForecastSample

FAN_LEVELS = tuple(np.round(np.arange(1, 10) * 0.1, 1))


# ---------------------------------------------------------------- file utils

def _write_bytes_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_text_atomic(path: Path, text: str) -> None:
    _write_bytes_atomic(path, text.encode("utf-8"))


def _write_json(path: Path, payload) -> None:
    _write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_npy(path: Path, arr: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr))
    _write_bytes_atomic(path, buf.getvalue())


def _fmt(value: float) -> str:
    return repr(float(value))


def _csv_line(values) -> str:
    return ",".join(_fmt(v) for v in values)


# ---------------------------------------------------------------- manifest io

def _save_manifest(out_dir: Path, source: str, schema: CsvSchema,
                   split: DatasetSplit, clamped: int, dropped: int) -> None:
    arrays = out_dir / "arrays"
    groups = {"train": split.train, "validation": split.validation, "test": split.test}
    dates = {}
    for name, samples in groups.items():
        _write_npy(arrays / f"x_{name}.npy", np.stack([s.x for s in samples]))
        _write_npy(arrays / f"y_{name}.npy", np.stack([s.y for s in samples]))
        dates[name] = [s.issue_date.isoformat() for s in samples]
    manifest = {
        "schema": 1,
        "source": source,
        "schema_mapping": {
            "timestamp": schema.timestamp,
            "power": schema.power,
            "covariates": list(schema.covariates),
        },
        "horizon": split.train[0].horizon,
        "clamped_rows": clamped,
        "dropped_days": dropped,
        "counts": {name: len(samples) for name, samples in groups.items()},
        "date_ranges": {name: [d[0], d[-1]] for name, d in dates.items()},
        "dates": dates,
        "feature_names": list(split.feature_stats.names or ()),
        "feature_mean": [float(v) for v in split.feature_stats.mean],
        "feature_std": [float(v) for v in split.feature_stats.std],
        "arrays": "arrays",
    }
    _write_json(out_dir / "manifest.json", manifest)


def _load_manifest(manifest_dir: Path) -> tuple[DatasetSplit, dict]:
    manifest_path = manifest_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("schema") != 1:
        raise ConfigError(f"{manifest_path}: unsupported manifest schema")
    arrays = manifest_dir / manifest["arrays"]

    def load_group(name):
        x = np.load(arrays / f"x_{name}.npy")
        y = np.load(arrays / f"y_{name}.npy")
        dates = [dt.date.fromisoformat(d) for d in manifest["dates"][name]]
        return tuple(
            ForecastSample(issue_date=date, x=xi, y=yi)
            for date, xi, yi in zip(dates, x, y)
        )

    stats = FeatureStats(
        mean=np.array(manifest["feature_mean"]),
        std=np.array(manifest["feature_std"]),
        names=tuple(manifest["feature_names"]) or None,
    )
    split = DatasetSplit(load_group("train"), load_group("validation"),
                         load_group("test"), stats)
    return split, manifest


def _test_lookup(split: DatasetSplit) -> dict[dt.date, ForecastSample]:
    return {s.issue_date: s for s in split.test}


def _parse_schema_flag(raw: str) -> CsvSchema:
    fields = {}
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad --schema fragment {part!r}; expected key=value")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    unknown = set(fields) - {"timestamp", "power", "covariates"}
    if unknown:
        raise ConfigError(f"unknown --schema keys: {sorted(unknown)}")
    return CsvSchema(
        timestamp=fields.get("timestamp", ""),
        power=fields.get("power", ""),
        covariates=tuple(c.strip() for c in fields.get("covariates", "").split(",")
                         if c.strip()),
    )


def _parse_dates(raw: str) -> list[dt.date]:
    try:
        return [dt.date.fromisoformat(part.strip()) for part in raw.split(",")
                if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --dates value: {exc}") from None


# ---------------------------------------------------------------- commands

def cmd_ingest(args) -> int:
    schema = _parse_schema_flag(args.schema)
    loaded = dataset.load_csv(args.data, schema)
    built = dataset.build_samples(loaded.records)
    split = dataset.split_and_normalize(built.samples, feature_names=loaded.covariate_names)
    out_dir = Path(args.out)
    _save_manifest(out_dir, str(args.data), schema, split,
                   loaded.clamped_rows, built.dropped_days)
    counts = {name: len(group) for name, group in
              (("train", split.train), ("validation", split.validation),
               ("test", split.test))}
    print(f"ingested {sum(counts.values())} samples "
          f"(train/validation/test = {counts['train']}/{counts['validation']}/{counts['test']}, "
          f"clamped {loaded.clamped_rows} rows, dropped {built.dropped_days} days)")
    return 0


def _losses_csv(history) -> str:
    lines = ["epoch,train_loss,val_loss,best_val"]
    for rec in history:
        lines.append(f"{rec.epoch},{_fmt(rec.train_loss)},{_fmt(rec.val_loss)},"
                     f"{_fmt(rec.best_val)}")
    return "\n".join(lines) + "\n"


def cmd_train(args, parser: argparse.ArgumentParser) -> int:
    if args.model == "dcn" and not args.iqn:
        parser.error("training the correlation network requires --iqn "
                     "(marginals are trained first)")
    config: RunConfig = load_config(args.config) if args.config else RunConfig()
    split, _ = _load_manifest(Path(args.manifest))

    warm = None
    if args.resume:
        warm = ckpt_io.load_checkpoint(args.resume).tensors

    if args.model == "iqn":
        settings = iqn.IqnConfig(tcn=config.tcn, train=config.train, seed=config.seed,
                                 grid_size=config.grid_size)
        model, result = iqn.train_iqn(split, settings, warm_start=warm)
        saved = ckpt_io.checkpoint_from_iqn(model, split.feature_stats)
    else:
        iqn_model = ckpt_io.iqn_from_checkpoint(ckpt_io.load_checkpoint(args.iqn))
        settings = dcn.DcnConfig(tcn=config.tcn, train=config.train, seed=config.seed,
                                 grid_size=config.grid_size)
        model, result = dcn.train_dcn(split, iqn_model, settings, warm_start=warm)
        saved = ckpt_io.checkpoint_from_dcn(model, split.feature_stats)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt_io.save_checkpoint(out, saved)
    _write_text_atomic(out.with_suffix(out.suffix + ".losses.csv"),
                       _losses_csv(result.history))
    print(f"trained {args.model}: {result.epochs_run} epochs, "
          f"best validation loss {result.best_val:.6f} -> {out}")
    return 0


def _load_static_copula(path: Path) -> gaussian.StaticCopula:
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("schema") != 1 or payload.get("kind") != "static_copula":
        raise CheckpointFormatError(f"{path}: not a static copula file")
    return gaussian.StaticCopula(
        r_static=np.array(payload["r"]),
        l_static=dcn.CholeskyFactor(np.array(payload["l"])),
        jitter=float(payload["jitter"]),
    )


def _fit_or_load_static(path: Path, split: DatasetSplit, iqn_model,
                        grid_size: int) -> gaussian.StaticCopula:
    if path.exists():
        return _load_static_copula(path)
    u_train = dcn.precompute_marginal_cdfs(split.train, iqn_model, grid_size)
    copula = gaussian.fit_static_copula(u_train)
    _write_json(path, {
        "schema": 1,
        "kind": "static_copula",
        "jitter": copula.jitter,
        "r": [[float(v) for v in row] for row in copula.r_static],
        "l": [[float(v) for v in row] for row in copula.l_static.l],
    })
    return copula


def _resolve_correlation(args, parser, split, iqn_model):
    """Returns (correlation source, model id) from --dcn / --static-copula."""
    if bool(args.dcn) == bool(args.static_copula):
        parser.error("exactly one of --dcn or --static-copula is required")
    if args.dcn:
        model = ckpt_io.dcn_from_checkpoint(ckpt_io.load_checkpoint(args.dcn))
        return model, "dcqn"
    copula = _fit_or_load_static(Path(args.static_copula), split, iqn_model,
                                 args.grid_size)
    return copula.l_static, "static"


def _requested_samples(args, parser, split) -> list[ForecastSample]:
    if bool(args.date) == bool(args.all_test):
        parser.error("exactly one of --date or --all-test is required")
    if args.all_test:
        return list(split.test)
    lookup = _test_lookup(split)
    picked = []
    for date in _parse_dates(args.date):
        if date not in lookup:
            raise ConfigError(f"date {date.isoformat()} is not in the test split")
        picked.append(lookup[date])
    return picked


def cmd_generate(args, parser: argparse.ArgumentParser) -> int:
    split, _ = _load_manifest(Path(args.manifest))
    iqn_model = ckpt_io.iqn_from_checkpoint(ckpt_io.load_checkpoint(args.iqn))
    correlation, model_id = _resolve_correlation(args, parser, split, iqn_model)
    samples = _requested_samples(args, parser, split)
    out_dir = Path(args.out)

    for sample in samples:
        date = sample.issue_date.isoformat()
        scen = scengen.generate(sample.x, args.scenarios, iqn_model, correlation,
                                seed=args.seed, model_id=model_id,
                                issue_date=sample.issue_date)
        lines = [_csv_line(row) for row in scen.scenarios]
        _write_text_atomic(out_dir / f"scenarios_{date}.csv", "\n".join(lines) + "\n")

        curves = scengen.marginal_quantile_curves(sample.x, iqn_model, metrics.PS_LEVELS)
        header = "level," + ",".join(f"t{i:02d}" for i in range(iqn_model.horizon))
        curve_lines = [header] + [
            f"{_fmt(level)},{_csv_line(row)}"
            for level, row in zip(metrics.PS_LEVELS, curves)
        ]
        _write_text_atomic(out_dir / f"quantiles_{date}.csv",
                           "\n".join(curve_lines) + "\n")

        payload = scen.provenance.to_dict()
        payload["point_forecast"] = [float(v) for v in
                                     scengen.point_forecast(sample.x, iqn_model)]
        _write_json(out_dir / f"scenarios_{date}.json", payload)
    print(f"generated {args.scenarios} scenarios for {len(samples)} sample(s) -> {out_dir}")
    return 0


def _read_scenario_dir(directory: Path, dates: list[dt.date]):
    """Per-date model outputs; raises listing any missing dates."""
    missing = [d.isoformat() for d in dates
               if not (directory / f"scenarios_{d.isoformat()}.csv").exists()]
    if missing:
        raise ConfigError(f"{directory}: missing scenario files for dates {missing}")
    forecasts = []
    model_id = None
    for date in dates:
        iso = date.isoformat()
        scen = np.loadtxt(directory / f"scenarios_{iso}.csv", delimiter=",", ndmin=2)
        curve_rows = np.loadtxt(directory / f"quantiles_{iso}.csv", delimiter=",",
                                skiprows=1, ndmin=2)
        payload = json.loads((directory / f"scenarios_{iso}.json").read_text())
        model_id = payload["model"]
        forecasts.append(metrics.SampleForecast(
            point=np.array(payload["point_forecast"]),
            quantile_curves=curve_rows[:, 1:],
            scenarios=scen,
        ))
    return forecasts, model_id


def cmd_evaluate(args) -> int:
    split, manifest = _load_manifest(Path(args.manifest))
    dates = [s.issue_date for s in split.test]
    measured = [s.y for s in split.test]
    out_dir = Path(args.out)
    reports = []
    for directory in args.scenarios_dir:
        forecasts, model_id = _read_scenario_dir(Path(directory), dates)
        report = metrics.evaluate(measured, forecasts, model_id,
                                  variogram_order=args.variogram_order)
        reports.append(report)
        _write_json(out_dir / f"metrics_{model_id}.json", report.to_dict())
    table = metrics.format_table(reports)
    _write_text_atomic(out_dir / "metrics.txt", table)
    sys.stdout.write(table)
    return 0


def cmd_export_plots(args, parser: argparse.ArgumentParser) -> int:
    split, _ = _load_manifest(Path(args.manifest))
    lookup = _test_lookup(split)
    dates = _parse_dates(args.dates)
    for date in dates:
        if date not in lookup:
            raise ConfigError(f"date {date.isoformat()} is not in the test split")
    out_dir = Path(args.out)

    if args.what == "fans":
        if not args.iqn:
            parser.error("--what fans requires --iqn")
        iqn_model = ckpt_io.iqn_from_checkpoint(ckpt_io.load_checkpoint(args.iqn))
        for date in dates:
            sample = lookup[date]
            curves = scengen.marginal_quantile_curves(sample.x, iqn_model,
                                                      np.array(FAN_LEVELS))
            _write_json(out_dir / f"fan_{date.isoformat()}.json", {
                "schema": 1,
                "kind": "fan",
                "date": date.isoformat(),
                "levels": list(FAN_LEVELS),
                "curves": [[float(v) for v in row] for row in curves],
                "measured": [float(v) for v in sample.y],
            })
    elif args.what == "covariance":
        if not args.dcn and not args.static_copula:
            parser.error("--what covariance requires --dcn and/or --static-copula")
        if args.dcn:
            model = ckpt_io.dcn_from_checkpoint(ckpt_io.load_checkpoint(args.dcn))
            for date in dates:
                factor = dcn.build_cholesky(lookup[date].x, model)
                _write_json(out_dir / f"covariance_{date.isoformat()}.json", {
                    "schema": 1,
                    "kind": "covariance",
                    "model": "dynamic",
                    "date": date.isoformat(),
                    "matrix": [[float(v) for v in row] for row in factor.covariance()],
                })
        if args.static_copula:
            copula = _load_static_copula(Path(args.static_copula))
            _write_json(out_dir / "covariance_static.json", {
                "schema": 1,
                "kind": "covariance",
                "model": "static",
                "date": None,
                "matrix": [[float(v) for v in row]
                           for row in copula.l_static.covariance()],
            })
    elif args.what == "scenarios":
        if not args.iqn:
            parser.error("--what scenarios requires --iqn")
        iqn_model = ckpt_io.iqn_from_checkpoint(ckpt_io.load_checkpoint(args.iqn))
        correlation, model_id = _resolve_correlation(args, parser, split, iqn_model)
        for date in dates:
            sample = lookup[date]
            scen = scengen.generate(sample.x, args.scenarios, iqn_model, correlation,
                                    seed=args.seed, model_id=model_id,
                                    issue_date=date)
            _write_json(out_dir / f"scenarios_{date.isoformat()}.json", {
                "schema": 1,
                "kind": "scenarios",
                "date": date.isoformat(),
                "model": model_id,
                "scenarios": [[float(v) for v in row] for row in scen.scenarios],
                "measured": [float(v) for v in sample.y],
            })
    else:  # argparse choices should prevent this
        parser.error(f"unknown --what value {args.what!r}")
    print(f"exported {args.what} plot data for {len(dates)} date(s) -> {out_dir}")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcqn",
        description="Day-ahead renewable energy scenario generation with "
                    "dynamic temporal correlations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a CSV and write a dataset manifest")
    p.add_argument("--data", required=True, help="hourly CSV file")
    p.add_argument("--schema", required=True,
                   help="column mapping, e.g. "
                        "'timestamp=TIMESTAMP;power=TARGETVAR;covariates=U10,V10'")
    p.add_argument("--out", required=True, help="manifest output directory")

    p = sub.add_parser("train", help="train the quantile or correlation network")
    p.add_argument("--model", required=True, choices=("iqn", "dcn"))
    p.add_argument("--config", help="run configuration file")
    p.add_argument("--manifest", required=True, help="ingest output directory")
    p.add_argument("--iqn", help="IQN checkpoint (required for --model dcn)")
    p.add_argument("--resume", help="checkpoint to warm-start from")
    p.add_argument("--out", required=True, help="checkpoint output path")

    p = sub.add_parser("generate", help="generate scenario files for test dates")
    p.add_argument("--iqn", required=True, help="IQN checkpoint")
    p.add_argument("--dcn", help="DCN checkpoint (dynamic correlation)")
    p.add_argument("--static-copula", help="static copula JSON (fit if absent)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--date", help="comma-separated test dates (YYYY-MM-DD)")
    p.add_argument("--all-test", action="store_true", help="all test dates")
    p.add_argument("-M", "--scenarios", type=int, default=scengen.DEFAULT_SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=512,
                   help="inversion grid for fitting a static copula")
    p.add_argument("--out", required=True, help="scenario output directory")

    p = sub.add_parser("evaluate", help="score scenario directories on the test split")
    p.add_argument("--scenarios-dir", action="append", required=True,
                   help="directory written by generate (repeatable)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variogram-order", type=float, default=2.0)
    p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser("export-plots", help="write plot-data JSON files")
    p.add_argument("--what", required=True, choices=("fans", "scenarios", "covariance"))
    p.add_argument("--dates", required=True, help="comma-separated test dates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--iqn", help="IQN checkpoint")
    p.add_argument("--dcn", help="DCN checkpoint")
    p.add_argument("--static-copula", help="static copula JSON")
    p.add_argument("-M", "--scenarios", type=int, default=scengen.DEFAULT_SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-size", type=int, default=512)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "ingest":
            return cmd_ingest(args)
        if args.command == "train":
            return cmd_train(args, parser)
        if args.command == "generate":
            return cmd_generate(args, parser)
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "export-plots":
            return cmd_export_plots(args, parser)
        parser.error(f"unknown command {args.command!r}")
    except DcqnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
