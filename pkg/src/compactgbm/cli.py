"""Command-line entry point: ``compactgbm {train,predict,eval,cv}``."""
from __future__ import annotations

import argparse
import csv
import statistics
import sys

import numpy as np

from .binning import BIN_CACHE, DEFAULT_T_SPLIT, MAX_BINS, ZERO_COPY
from .boosting import BoosterConfig, MergeSpec, predict, sigmoid, train
from .columnar import Session
from .errors import CompactGBMError, ConfigError, SchemaError
from .ingest import ingest_csv, read_table
from .merge import register_side_table
from .metrics import cross_validate, metric_for
from .persistence import load_model, save_model

_MODES = {"cache": BIN_CACHE, "zerocopy": ZERO_COPY}


def parse_merge(spec: str):
    """``<file>:<key_column>:<col1,col2,...>`` -> (path, key, [cols])."""
    path, sep, rest = spec.rpartition(":")
    path, sep2, key = path.rpartition(":")
    if not sep or not sep2 or not path or not key or not rest:
        raise ConfigError(f"bad --merge spec {spec!r}; expected <file>:<key_column>:<col1,col2,...>")
    cols = [c for c in rest.split(",") if c]
    if not cols:
        raise ConfigError(f"--merge spec {spec!r} names no columns")
    return path, key, cols


def load_merges(specs, max_bins: int, session: Session | None):
    merges, keep_alive = [], []
    for spec in specs or ():
        path, key, cols = parse_merge(spec)
        table = read_table(path, [key, *cols])
        keep_alive.append(table)
        side = register_side_table(table.column(key), {c: table.column(c) for c in cols},
                                   max_bins, session, table_id=path)
        merges.append(MergeSpec(side, key, tuple(cols)))
    return merges, keep_alive


def _booster_config(args) -> BoosterConfig:
    return BoosterConfig(
        num_trees=args.num_trees,
        learning_rate=args.learning_rate,
        max_leaves=args.max_leaves,
        max_bins=args.max_bins,
        min_data_in_leaf=args.min_data_in_leaf,
        min_split_gain=args.min_split_gain,
        t_split=args.t_split,
        adaptive_bins=args.adaptive_bins,
        objective=args.objective,
        seed=args.seed,
        early_stopping_rounds=args.early_stopping_rounds,
        binning_mode=_MODES[args.binning_mode],
    ).validate()


def _loss_line(t, train_loss, valid_loss, prefix=""):
    line = f"{prefix}iter={t} train_loss={train_loss!r}"
    if valid_loss is not None:
        line += f" valid_loss={valid_loss!r}"
    print(line, flush=True)


def cmd_train(args) -> int:
    config = _booster_config(args)
    session = Session()
    data, _table = ingest_csv(args.data, args.label)
    if data is None:
        raise SchemaError(f"{args.data}: no data rows")
    merges, _sides = load_merges(args.merge, config.max_bins, session)
    valid = None
    if args.valid:
        valid, _vtable = ingest_csv(args.valid, args.label)
    model = train(config, data, valid, merges, session=session, callback=_loss_line)
    save_model(model, args.model)
    if args.mem_report:
        for line in session.report(peak=True).lines():
            print(line)
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data, _table = ingest_csv(args.data, args.label, require_label=False)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        header = ["score"] + (["probability"] if model.objective == "logloss" else [])
        if data is None:
            writer.writerow(header)
            return 0
        merges, _sides = load_merges(args.merge, MAX_BINS, None)
        scores = predict(model, data, merges)
        writer.writerow(header)
        if model.objective == "logloss":
            for s, p in zip(scores, sigmoid(scores)):
                writer.writerow([repr(float(s)), repr(float(p))])
        else:
            for s in scores:
                writer.writerow([repr(float(s))])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data, _table = ingest_csv(args.data, args.label)
    if data is None:
        raise SchemaError(f"{args.data}: no data rows")
    merges, _sides = load_merges(args.merge, MAX_BINS, None)
    name, fn = metric_for(model.objective)
    value = fn(data.labels.values, predict(model, data, merges))
    print(f"metric={name} value={value!r}")
    return 0


def cmd_cv(args) -> int:
    config = _booster_config(args)
    data, _table = ingest_csv(args.data, args.label)
    if data is None:
        raise SchemaError(f"{args.data}: no data rows")
    merges, _sides = load_merges(args.merge, config.max_bins, None)
    callback = None
    if args.loss_log:
        def callback(fold, t, tl, vl):
            _loss_line(t, tl, vl, prefix=f"fold={fold} ")
    name, scores = cross_validate(config, data, args.folds, merges, callback=callback)
    for fold, value in enumerate(scores):
        print(f"fold={fold} metric={name} value={value!r}")
    print(f"cv_mean metric={name} value={statistics.fmean(scores)!r}")
    return 0


def _add_booster_flags(p: argparse.ArgumentParser) -> None:
    d = BoosterConfig()
    p.add_argument("--objective", choices=("mse", "logloss"), default=d.objective)
    p.add_argument("--num-trees", type=int, default=d.num_trees)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--max-leaves", type=int, default=d.max_leaves)
    p.add_argument("--max-bins", type=int, default=MAX_BINS)
    p.add_argument("--min-data-in-leaf", type=int, default=d.min_data_in_leaf)
    p.add_argument("--min-split-gain", type=float, default=d.min_split_gain)
    p.add_argument("--adaptive-bins", action="store_true")
    p.add_argument("--t-split", type=int, default=DEFAULT_T_SPLIT)
    p.add_argument("--binning-mode", choices=tuple(_MODES), default="cache")
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--early-stopping-rounds", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compactgbm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write it as JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--valid")
    p.add_argument("--merge", action="append", metavar="FILE:KEY:COLS")
    p.add_argument("--model", required=True, help="output model path")
    p.add_argument("--mem-report", action="store_true")
    _add_booster_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a CSV with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label", help="column to ignore if present")
    p.add_argument("--merge", action="append", metavar="FILE:KEY:COLS")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="report RMSE or AUC of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--merge", action="append", metavar="FILE:KEY:COLS")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--merge", action="append", metavar="FILE:KEY:COLS")
    p.add_argument("--loss-log", action="store_true", help="print per-iteration loss lines per fold")
    _add_booster_flags(p)
    p.set_defaults(func=cmd_cv)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CompactGBMError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"IOError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
