"""Command-line pipeline: synth, ingest, train, evaluate, baselines, ablate, predict.

Commands talk to each other only through files:

    data_dir/  taxi_edges.csv  aux_edges.csv  zones.txt  dataset.cfg
    run_dir/   config.cfg  checkpoint.bin  transforms.json  loss_curve.csv
               metrics.json  metrics.txt

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.  Diagnostics go to stderr, results to stdout.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, load_run_config, read_config_file
from .graphbuild import build_series, make_samples
from .ingest import ConfigError, DataError, ParseStats, Platform, ZoneRegistry, ingest_files, \
    read_edge_list, write_edge_list
from .models import BASELINES, VARIANTS, CheckpointError, ModelConfig, load_model, save_checkpoint
from .synth import generate
from .training import MetricsReport, NumericalError, Prepared, evaluate, fit_and_evaluate, \
    mean_predictor_baseline, prepare

logger = logging.getLogger("flowfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMPARISON_MODELS = ("full",) + BASELINES


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# dataset directory


def write_dataset_meta(data_dir: Path, P: int, days: int, epoch: str) -> None:
    (data_dir / "dataset.cfg").write_text(f"P = {P}\ndays = {days}\nepoch = {epoch}\n")


def load_dataset(cfg: RunConfig):
    """Read both edge lists and the registry; returns (taxi, aux, P)."""
    data_dir = Path(cfg.paths["data_dir"])
    meta_path = data_dir / "dataset.cfg"
    if not meta_path.exists():
        raise DataError(f"{meta_path} missing; run `synth` or `ingest` first")
    meta = read_config_file(meta_path)
    P, days = int(meta["P"]), int(meta["days"])
    zones = cfg.paths["zones"] or data_dir / "zones.txt"
    registry = ZoneRegistry.from_file(zones) if Path(zones).exists() else ZoneRegistry.default()
    series = [build_series(read_edge_list(data_dir / f"{p.value}_edges.csv"), registry, P, P * days, p)
              for p in (Platform.TAXI, Platform.AUX)]
    return series[0], series[1], P


def resolve(cfg: RunConfig, taxi, P: int) -> RunConfig:
    """Pin model dimensions to the dataset."""
    return cfg.with_model(M=len(taxi.registry), P=P)


def prepared_data(cfg: RunConfig) -> tuple[RunConfig, Prepared]:
    taxi, aux, P = load_dataset(cfg)
    cfg = resolve(cfg, taxi, P)
    return cfg, prepare(taxi, aux, cfg.model.k, P, cfg.train)


# ---------------------------------------------------------------------------
# outputs


def format_table(reports: list[MetricsReport]) -> tuple[str, str]:
    """Aligned text and CSV renderings of a model comparison."""
    width = max([len("model")] + [len(r.model) for r in reports])
    lines = [f"{'model':<{width}}  {'MAE':>12}  {'MSE':>14}"]
    lines += [f"{r.model:<{width}}  {r.mae:>12.4f}  {r.mse:>14.4f}" for r in reports]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "mae", "mse"])
    for r in reports:
        writer.writerow([r.model, repr(r.mae), repr(r.mse)])
    return "\n".join(lines) + "\n", buf.getvalue()


def write_run(run_dir: Path, cfg: RunConfig, model, result, data: Prepared) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "config.cfg")
    save_checkpoint(run_dir / "checkpoint.bin", model.params, model.config)
    (run_dir / "transforms.json").write_text(json.dumps(
        {p.value: t.to_dict() for p, t in data.transforms.items()}, indent=2))
    with open(run_dir / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_mae"])
        for row in result.loss_curve:
            writer.writerow([row["epoch"], repr(row["train_loss"]), repr(row["val_mae"])])


def write_metrics(run_dir: Path, report: MetricsReport) -> None:
    (run_dir / "metrics.json").write_text(report.to_json() + "\n")
    text, _ = format_table([report])
    (run_dir / "metrics.txt").write_text(
        text + f"zones above mean MAE: {report.frac_zones_above_mean:.3f}\n")


def train_one(cfg: RunConfig, run_dir: Path) -> MetricsReport:
    cfg, data = prepared_data(cfg)
    model, result, report = fit_and_evaluate(cfg.model, cfg.train, data)
    cfg = RunConfig(dict(cfg.paths, run_dir=str(run_dir)), cfg.ingest, cfg.model, cfg.train, cfg.synth)
    write_run(run_dir, cfg, model, result, data)
    write_metrics(run_dir, report)
    return report


def _train_named(args) -> dict:
    cfg, name, run_dir = args
    cfg = RunConfig(cfg.paths, cfg.ingest, ModelConfig.for_model(
        name, **{k: v for k, v in cfg.model.to_dict().items() if k not in ("variant", "baseline")}),
        cfg.train, cfg.synth)
    return train_one(cfg, Path(run_dir)).to_dict()


def run_comparison(cfg: RunConfig, names, out_dir: Path, jobs: int = 1) -> list[MetricsReport]:
    tasks = [(cfg, name, str(out_dir / name)) for name in names]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            dicts = list(pool.map(_train_named, tasks))
    else:
        dicts = [_train_named(t) for t in tasks]
    reports = [MetricsReport.from_dict(d) for d in dicts]
    text, table_csv = format_table(reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.txt").write_text(text)
    (out_dir / "comparison.csv").write_text(table_csv)
    cfg.write(out_dir / "config.cfg")
    return reports


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    data_dir = Path(cfg.paths["data_dir"])
    taxi, aux = generate(cfg.synth, data_dir)
    (data_dir / "zones.txt").write_text("\n".join(str(z) for z in range(1, cfg.synth.M + 1)) + "\n")
    write_dataset_meta(data_dir, cfg.synth.P, cfg.synth.D, cfg.ingest["epoch"])
    cfg.write(data_dir / "synth.cfg")
    print(taxi)
    print(aux)
    return EXIT_OK


def cmd_ingest(cfg: RunConfig, args) -> int:
    data_dir = Path(cfg.paths["data_dir"])
    data_dir.mkdir(parents=True, exist_ok=True)
    registry = ZoneRegistry.from_file(cfg.paths["zones"]) if cfg.paths["zones"] else ZoneRegistry.default()
    P, days, epoch = cfg.model.P, int(cfg.ingest["days"]), cfg.ingest["epoch"]
    for platform in Platform:
        files = [f for f in cfg.paths[f"{platform.value}_trips"].split(",") if f]
        if not files:
            raise ConfigError(f"paths.{platform.value}_trips is empty")
        stats = ParseStats()
        rows = ingest_files(files, platform, epoch, P, days, cfg.schema(platform.value), registry, stats)
        out = data_dir / f"{platform.value}_edges.csv"
        write_edge_list(out, rows)
        logger.info("%s: %d trips binned, %d rows skipped %s", platform.value,
                    sum(r[3] for r in rows), stats.skipped, dict(stats.reasons))
        print(out)
    (data_dir / "zones.txt").write_text("\n".join(map(str, registry.zone_ids)) + "\n")
    write_dataset_meta(data_dir, P, days, epoch)
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    run_dir = Path(cfg.paths["run_dir"])
    cfg, data = prepared_data(cfg)
    model, result, report = fit_and_evaluate(cfg.model, cfg.train, data)
    write_run(run_dir, cfg, model, result, data)
    print(f"{cfg.model.name}: best epoch {result.best_epoch}, "
          f"{len(result.loss_curve)} epochs, checkpoint {run_dir / 'checkpoint.bin'}")
    return EXIT_OK


def _load_run(cfg: RunConfig):
    run_dir = Path(cfg.paths["run_dir"])
    snap = run_dir / "config.cfg"
    if not snap.exists():
        raise DataError(f"{snap} missing; run `train` first")
    run_cfg = load_run_config(snap)
    run_cfg, data = prepared_data(run_cfg)
    model = load_model(run_dir / "checkpoint.bin", run_cfg.model)
    return run_dir, run_cfg, data, model


def cmd_evaluate(cfg: RunConfig, args) -> int:
    run_dir, run_cfg, data, model = _load_run(cfg)
    report = evaluate(model, data.test, data.transforms)
    write_metrics(run_dir, report)
    ref = mean_predictor_baseline(data.train, data.test, run_cfg.model.P)
    text, _ = format_table([report])
    sys.stdout.write(text)
    logger.info("mean-predictor reference MAE %.4f MSE %.4f", ref.mae, ref.mse)
    return EXIT_OK


def _comparison(cfg: RunConfig, args, names) -> int:
    out_dir = Path(cfg.paths["run_dir"])
    reports = run_comparison(cfg, names, out_dir, args.jobs)
    sys.stdout.write(format_table(reports)[0])
    _, data = prepared_data(cfg)
    ref = mean_predictor_baseline(data.train, data.test, cfg.model.P)
    (out_dir / "reference.json").write_text(ref.to_json() + "\n")
    return EXIT_OK


def cmd_baselines(cfg: RunConfig, args) -> int:
    return _comparison(cfg, args, COMPARISON_MODELS)


def cmd_ablate(cfg: RunConfig, args) -> int:
    return _comparison(cfg, args, VARIANTS)


def cmd_predict(cfg: RunConfig, args) -> int:
    run_dir, run_cfg, data, model = _load_run(cfg)
    taxi, aux, P = load_dataset(run_cfg)
    samples = {s.target_index: s for s in make_samples(taxi, aux, run_cfg.model.k, P)}
    if args.interval not in samples:
        lo, hi = min(samples), max(samples)
        raise DataError(f"interval {args.interval} has no sample; valid targets are {lo}..{hi}")
    sample = samples[args.interval]
    pred = model.predict([sample], data.transforms)[0]
    truth = sample.target.features
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["interval", "zone", "pred_inflow", "pred_outflow", "true_inflow", "true_outflow"])
    for i, zone in enumerate(taxi.registry.zone_ids):
        writer.writerow([args.interval, zone, repr(float(pred[0, i])), repr(float(pred[1, i])),
                         repr(float(truth[0, i])), repr(float(truth[1, i]))])
    if cfg.paths["out"]:
        Path(cfg.paths["out"]).write_text(out.getvalue())
    sys.stdout.write(out.getvalue())
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "baselines": cmd_baselines,
    "ablate": cmd_ablate,
    "predict": cmd_predict,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowfuse", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="sets synth.seed and train.seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("synth", "ingest", "train", "evaluate"):
        sub.add_parser(name)
    for name in ("baselines", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--jobs", type=int, default=1,
                       help="train member models in parallel processes")
    p = sub.add_parser("predict")
    p.add_argument("--interval", type=int, required=True, help="global target interval index")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"flowfuse: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides.setdefault("synth.seed", str(args.seed))
            overrides.setdefault("train.seed", str(args.seed))
        cfg = load_run_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"flowfuse: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"flowfuse: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"flowfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
