"""Command-line entry point: ``hazecast <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .data import generate_synthetic, load_dataset, make_windows, write_dataset
from .entropy import EmbeddingConfig, partition_by_entropy, segment_entropies
from .errors import HazecastRuntimeError, IoError, ValidationError
from .nsga2 import SearchConfig
from .retnet import HyperParams

COMMANDS = ("generate", "entropy", "cluster", "train", "forecast", "optimize", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _k(value: str):
    if value == "auto":
        return "auto"
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError("--k must be 'auto' or an integer") from None


def _k_range(value: str) -> tuple:
    try:
        lo, hi = (int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("--k-range must look like MIN,MAX") from None
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazecast", description="Cluster-wise RetNet forecasting of PV power under haze.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--data", help="input CSV with a header row")
    p.add_argument("--schema", default="generic", choices=("jiangsu2015", "beijing2019", "generic"))
    p.add_argument("--target", default=None, help="target column for the generic schema")
    p.add_argument("--m", type=int, default=5, help="embedding dimension")
    p.add_argument("--tau", type=int, default=2, help="embedding delay")
    p.add_argument("--beta", type=float, default=0.8, help="Tsallis index")
    p.add_argument("--input-len", type=int, default=12)
    p.add_argument("--horizon", type=int, default=1)
    p.add_argument("--k", type=_k, default="auto")
    p.add_argument("--k-range", type=_k_range, default=(2, 5))
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--assign", default="medoid", choices=("medoid", "loss"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--optimizer", default="none", choices=("none", "nsga2", "rs"))
    p.add_argument("--pop", type=int, default=16)
    p.add_argument("--gens", type=int, default=10)
    p.add_argument("--model", help="model directory written by 'train' (forecast only)")
    p.add_argument("--epochs", type=int, default=HyperParams().epochs)
    p.add_argument("--search-epochs", type=int, default=30)
    p.add_argument("--days", type=int, default=90, help="synthetic days (generate only)")
    p.add_argument("--haze", type=float, default=0.3, help="synthetic haze fraction (generate only)")
    return p


def config_from_args(a) -> pl.PipelineConfig:
    return pl.PipelineConfig(
        entropy=EmbeddingConfig(a.m, a.tau, a.beta),
        input_len=a.input_len,
        horizon=a.horizon,
        k=a.k,
        k_range=tuple(a.k_range),
        alpha=a.alpha,
        assign_mode=a.assign,
        seed=a.seed,
        hyper=replace(HyperParams(), epochs=a.epochs),
        optimizer=a.optimizer,
        search=SearchConfig(population=a.pop, generations=a.gens, seed=a.seed),
        search_epochs=a.search_epochs,
    )


def _load(a):
    if not a.data:
        raise ValidationError(f"'{a.command}' needs --data")
    return load_dataset(a.data, a.schema, a.target)


def _out(a) -> Path:
    out = Path(a.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create {out}: {e}") from e
    return out


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_generate(a) -> list:
    path = _out(a) / "data.csv"
    write_dataset(generate_synthetic(a.days, a.seed, a.haze), path)
    return [path]


def cmd_entropy(a) -> list:
    data = _load(a)
    cfg = EmbeddingConfig(a.m, a.tau, a.beta)
    windows = make_windows(data, a.input_len, a.horizon)
    hist = np.stack([w.target_history for w in windows])
    ent = segment_entropies(hist, cfg)
    group = ["low"] * len(windows)
    if len(windows) >= 2:
        for i in partition_by_entropy(ent)[0]:
            group[i] = "high"
    path = _out(a) / "entropy.csv"
    _write_csv(path, ["segment_start", "entropy", "group"],
               [(w.origin_index, repr(float(e)), g) for w, e, g in zip(windows, ent, group)])
    return [path]


def cmd_cluster(a) -> list:
    data = _load(a)
    cfg = config_from_args(a)
    prep = pl.prepare(data, cfg)
    clustering = pl.cluster_training_windows(prep.train, cfg, min_size=cfg.hyper.batch)
    out = _out(a)
    _write_csv(out / "clusters.csv", ["segment_index", "label"], pl.cluster_rows(prep.train, clustering))
    tree = {
        group: {"leaves": [prep.train[i].origin_index for i in leaves], "merges": d.to_records()}
        for group, (d, leaves) in clustering.dendrograms.items()
    }
    _write_json(out / "dendrogram.json", tree)
    return [out / "clusters.csv", out / "dendrogram.json"]


def cmd_train(a) -> list:
    data = _load(a)
    result = pl.run_training_pipeline(data, config_from_args(a))
    out = _out(a)
    pl.save_model_set(result.models, out)
    return [out / "manifest.json"]


def cmd_forecast(a) -> list:
    if not a.model:
        raise ValidationError("'forecast' needs --model")
    models = pl.load_model_set(a.model)
    cfg = models.config
    prep = pl.prepare(_load(a), cfg, scalers=models.scalers)
    report = pl.forecast(prep.test, models, cfg)
    out = _out(a)
    paths = pl.emit_report(report, out)
    return paths[:2]


def cmd_optimize(a) -> list:
    data = _load(a)
    cfg = config_from_args(a)
    if cfg.optimizer == "none":
        cfg = replace(cfg, optimizer="nsga2")
    search = pl.optimize(pl.prepare(data, cfg), cfg)
    out = _out(a)
    pl.write_search(search, out)
    return [out / "trials.csv", out / "pareto.json"]


def cmd_report(a) -> list:
    report, _ = pl.run_report(_load(a), config_from_args(a))
    return pl.emit_report(report, _out(a))


HANDLERS = {
    "generate": cmd_generate, "entropy": cmd_entropy, "cluster": cmd_cluster, "train": cmd_train,
    "forecast": cmd_forecast, "optimize": cmd_optimize, "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        paths = HANDLERS[args.command](args)
    except ValidationError as e:
        print(f"hazecast: error: {e}", file=sys.stderr)
        return 1
    except (HazecastRuntimeError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"hazecast: runtime error: {e}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
