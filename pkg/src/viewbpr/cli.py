"""Command-line entry point: preprocess, train, evaluate, stats, sweep.

Settings resolve as command-line flag > VIEWBPR_* environment variable >
config file (flat YAML mapping) > built-in default.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import yaml

from .core import (
    Behavior,
    LearningRateMode,
    SamplerConfig,
    SamplerKind,
    TrainConfig,
    WeightingConfig,
    WeightingMode,
)
from .evaluation import evaluate, popularity_baseline, skewness_curve, split_leave_one_out
from .ingest import load_snapshot, preprocess, read_interactions, build_dataset, save_snapshot, table_summary
from .model import load_model, save_model
from .train import STREAM_SPLIT, TrainingDiverged, run_training, stream

logger = logging.getLogger("viewbpr")

ENV_PREFIX = "VIEWBPR_"
OUTPUT_VERSION = 1
_SAMPLER_NAMES = ("uniform", "reduced", "dns", "biased", "triple")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw_log: Optional[str] = None
    snapshot: Optional[str] = None
    model_out: str = "model.bin"
    report_out: str = "report.tsv"
    metrics_out: Optional[str] = None
    stats_dir: str = "stats"
    sweep_dir: str = "sweep"
    min_user_purchases: int = 12
    min_item_purchases: int = 16
    lenient: bool = False
    day_granular: bool = False
    sampler: str = "uniform"
    gamma: float = 1.0
    omega: str = "0.3,0.3,0.4"
    dns_x: int = 10
    exclude_views: bool = False
    pair_fallback: bool = False
    weighting: str = "global"
    alpha: float = 0.7
    beta: float = 0.5
    session_gap: int = 3600
    lr: float = 0.05
    lr_mode: str = "fixed"
    reg: float = 0.01
    factors: int = 32
    epochs: int = 50
    patience: int = 0
    seed: int = 0
    steps_per_epoch: int = 0  # 0: one pass over training purchases
    init_scale: float = 0.01
    k: int = 100

    def sampler_config(self) -> SamplerConfig:
        if self.sampler not in _SAMPLER_NAMES:
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        return SamplerConfig(
            kind=SamplerKind(self.sampler),
            gamma=self.gamma,
            omega=parse_omega(self.omega),
            dns_candidates=self.dns_x,
            exclude_views=self.exclude_views,
            pair_fallback=self.pair_fallback,
        )

    def weighting_config(self) -> WeightingConfig:
        return WeightingConfig(WeightingMode(self.weighting), self.alpha, self.beta, self.session_gap)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            lr_mode=LearningRateMode(self.lr_mode),
            regularization=self.reg,
            factors=self.factors,
            max_epochs=self.epochs,
            patience=self.patience,
            seed=self.seed,
            steps_per_epoch=self.steps_per_epoch or None,
            init_scale=self.init_scale,
            eval_k=self.k,
        )

    def echo(self) -> Dict[str, object]:
        return dataclasses.asdict(self)


def parse_omega(text) -> tuple:
    if isinstance(text, (list, tuple)):
        parts = [float(x) for x in text]
    else:
        parts = [float(x) for x in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"omega needs three comma-separated values, got {text!r}")
    return tuple(parts)


def _coerce(name: str, value):
    default = RunConfig.__dataclass_fields__[name].default
    if name == "omega":
        return ",".join(repr(x) for x in parse_omega(value))
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return None if value is None else str(value)


def load_config_file(path: Optional[str]) -> Dict[str, object]:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a flat key-value mapping")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {', '.join(unknown)}")
    return data


def resolve_config(file_values: Dict[str, object], flags: Dict[str, object], env: Optional[Dict[str, str]] = None) -> RunConfig:
    env = os.environ if env is None else env
    values = {}
    for f in fields(RunConfig):
        if flags.get(f.name) is not None:
            values[f.name] = _coerce(f.name, flags[f.name])
        elif ENV_PREFIX + f.name.upper() in env:
            values[f.name] = _coerce(f.name, env[ENV_PREFIX + f.name.upper()])
        elif f.name in file_values:
            values[f.name] = _coerce(f.name, file_values[f.name])
    return RunConfig(**values)


def _write(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


# --- commands -------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> str:
    if not cfg.raw_log or not cfg.snapshot:
        raise ConfigError("preprocess needs --input and --snapshot")
    events = read_interactions(cfg.raw_log, strict=not cfg.lenient)
    events = preprocess(events, cfg.min_user_purchases, cfg.min_item_purchases)
    dataset, ids = build_dataset(events, day_granular=True if cfg.day_granular else None)
    Path(cfg.snapshot).parent.mkdir(parents=True, exist_ok=True)
    save_snapshot(cfg.snapshot, dataset, ids)
    return table_summary(dataset)


def _load_splits(snapshot: str, seed: int):
    dataset, _ = load_snapshot(snapshot)
    return split_leave_one_out(dataset, stream(seed, STREAM_SPLIT))


def cmd_train(cfg: RunConfig):
    if not cfg.snapshot:
        raise ConfigError("train needs --snapshot")
    sampler, weighting, train_cfg = cfg.sampler_config(), cfg.weighting_config(), cfg.train_config()
    splits = _load_splits(cfg.snapshot, cfg.seed)
    model, report = run_training(splits, sampler, weighting, train_cfg)
    Path(cfg.model_out).parent.mkdir(parents=True, exist_ok=True)
    save_model(cfg.model_out, model)
    _write(cfg.report_out, report.to_tsv(header=cfg.echo()))
    for row in report.rows:
        logger.debug("epoch %d took %.3fs", row.epoch, row.seconds)
    return model, report


def cmd_evaluate(cfg: RunConfig, model_path: str, baseline: Optional[str] = None) -> List[tuple]:
    if not cfg.snapshot:
        raise ConfigError("evaluate needs --snapshot")
    model = load_model(model_path)
    dataset, _ = load_snapshot(cfg.snapshot)
    if (model.num_users, model.num_items) != (dataset.num_users, dataset.num_items):
        raise ConfigError(
            f"model is {model.num_users}x{model.num_items} but snapshot is {dataset.num_users}x{dataset.num_items}"
        )
    # the checkpoint records the run seed, which fixes the split it was trained on
    splits = split_leave_one_out(dataset, stream(model.seed, STREAM_SPLIT))
    rows = [("model",) + evaluate(model, splits, cfg.k)]
    if baseline == "popularity":
        rows.append(("popularity",) + evaluate(popularity_baseline(splits.train), splits, cfg.k))
    elif baseline is not None:
        raise ConfigError(f"unknown baseline {baseline!r}")
    return rows


def format_metrics(rows: Sequence[tuple], k: int) -> str:
    lines = [f"#viewbpr-metrics\t{OUTPUT_VERSION}", f"name\thr@{k}\tndcg@{k}"]
    lines += [f"{name}\t{hr!r}\t{ndcg!r}" for name, hr, ndcg in rows]
    return "\n".join(lines) + "\n"


def cmd_stats(cfg: RunConfig) -> Dict[str, str]:
    if not cfg.snapshot:
        raise ConfigError("stats needs --snapshot")
    dataset, _ = load_snapshot(cfg.snapshot)
    out = {}
    for behavior in (Behavior.PURCHASE, Behavior.VIEW):
        path = str(Path(cfg.stats_dir) / f"{behavior.value}_skewness.tsv")
        if (dataset.num_purchases if behavior is Behavior.PURCHASE else dataset.num_views) == 0:
            continue
        curve = skewness_curve(dataset, behavior)
        text = f"#viewbpr-skewness\t{OUTPUT_VERSION}\t{behavior.value}\nitem_ratio\tinteraction_share\n"
        text += "".join(f"{x!r}\t{y!r}\n" for x, y in curve)
        _write(path, text)
        out[behavior.value] = path
    return out


def _swept_keys(file_values: Dict[str, object]) -> List[str]:
    keys = []
    for k, v in file_values.items():
        if isinstance(v, list) and not (k == "omega" and _is_omega(v)):
            keys.append(k)
    return sorted(keys)


def _is_omega(v) -> bool:
    return len(v) == 3 and all(isinstance(x, (int, float)) for x in v)


def expand_sweep(file_values: Dict[str, object]) -> List[Dict[str, object]]:
    """One value dict per point of the cartesian product of list-valued keys."""
    keys = _swept_keys(file_values)
    combos = itertools.product(*(file_values[k] for k in keys))
    return [dict(file_values, **dict(zip(keys, combo))) for combo in combos]


def cmd_sweep(file_values: Dict[str, object], flags: Dict[str, object], env=None) -> List[str]:
    """Train once per sweep point; each run gets its own directory under sweep_dir."""
    keys = _swept_keys(file_values)
    summary = [f"#viewbpr-sweep\t{OUTPUT_VERSION}", "run\tsettings\tbest_epoch\thr\tndcg"]
    runs = []
    out_dir = None
    for n, point in enumerate(expand_sweep(file_values)):
        cfg = resolve_config(point, flags, env)
        out_dir = Path(cfg.sweep_dir)
        run_dir = out_dir / f"run{n:03d}"
        cfg.model_out = str(run_dir / "model.bin")
        cfg.report_out = str(run_dir / "report.tsv")
        _, report = cmd_train(cfg)
        best = report.best_row()
        settings = ",".join(f"{k}={point[k]}" for k in keys)
        summary.append(f"run{n:03d}\t{settings}\t{report.best_epoch}\t{best.hr!r}\t{best.ndcg!r}")
        runs.append(str(run_dir))
    _write(str(out_dir / "summary.tsv"), "\n".join(summary) + "\n")
    return runs


# --- argument parsing -------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML key-value config file")
    p.add_argument("--snapshot", help="dataset snapshot path")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="top-k cutoff for HR/NDCG")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sampler", choices=sorted(_SAMPLER_NAMES))
    p.add_argument("--gamma", type=float)
    p.add_argument("--omega", help="three comma-separated pair-kind probabilities")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--weighting", choices=["global", "per-user"])
    p.add_argument("--factors", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-mode", choices=["fixed", "adagrad"])
    p.add_argument("--reg", type=float)
    p.add_argument("--dns-x", type=int)
    p.add_argument("--session-gap", type=int, metavar="SECONDS")
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--exclude-views", action="store_const", const=True)
    p.add_argument("--pair-fallback", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewbpr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean a raw log into a dataset snapshot")
    _add_common(p)
    p.add_argument("--input", dest="raw_log")
    p.add_argument("--min-user-purchases", type=int)
    p.add_argument("--min-item-purchases", type=int)
    p.add_argument("--lenient", action="store_const", const=True, help="skip malformed lines")
    p.add_argument("--day-granular", action="store_const", const=True)

    p = sub.add_parser("train", help="train a model on a snapshot")
    _add_common(p)
    _add_training(p)
    p.add_argument("--model-out")
    p.add_argument("--report-out")

    p = sub.add_parser("evaluate", help="HR/NDCG of a checkpoint")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--baseline", choices=["popularity"])
    p.add_argument("--metrics-out")

    p = sub.add_parser("stats", help="popularity skewness curves")
    _add_common(p)
    p.add_argument("--out-dir", dest="stats_dir")

    p = sub.add_parser("sweep", help="one training run per value of each list-valued config key")
    _add_common(p)
    _add_training(p)
    p.add_argument("--out-dir", dest="sweep_dir")
    return parser


_NON_CONFIG = {"command", "config", "verbose", "model", "baseline"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        file_values = load_config_file(args.config)
        if args.command == "sweep":
            for run in cmd_sweep(file_values, flags):
                print(run)
            return 0
        cfg = resolve_config(file_values, flags)
        if args.command == "preprocess":
            print(cmd_preprocess(cfg))
        elif args.command == "train":
            _, report = cmd_train(cfg)
            best = report.best_row()
            print(f"best epoch {report.best_epoch}: hr@{cfg.k}={best.hr:.4f} ndcg@{cfg.k}={best.ndcg:.4f}")
        elif args.command == "evaluate":
            text = format_metrics(cmd_evaluate(cfg, args.model, args.baseline), cfg.k)
            sys.stdout.write(text)
            if args.metrics_out:
                _write(args.metrics_out, text)
        elif args.command == "stats":
            for behavior, path in cmd_stats(cfg).items():
                print(f"{behavior}\t{path}")
    except (ConfigError, ValueError, OSError) as exc:
        print(f"viewbpr: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"viewbpr: training diverged: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
