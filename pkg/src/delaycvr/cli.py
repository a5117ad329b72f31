"""Command-line entry point.

Subcommands: generate, train, evaluate, experiment, variance-report.
Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(including any failed experiment cell). Logging is line-oriented
key=value on stdout with a short human-readable summary at the end.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_run_config
from .errors import ConfigError, DelayCvrError, MissingGroundTruthError
from .evaluate import METHODS, log_loss, mean_propensity, run_experiment
from .fileio import atomic_write_text
from .losses import ClipPolicy, cross_entropy_deltas, icvr_variance, ips_variance
from .models import LinearSigmoidModel, predict_cvr, predict_propensity
from .synthgen import generate, read_dataset, write_dataset
from .trainers import DfmModel, train_dfm, train_dla, train_naive, train_oracle


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the exit-code contract."""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="delaycvr",
                     description="Delayed-feedback CVR prediction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic dataset")
    p_gen.add_argument("--config", help="run-config JSON path")
    p_gen.add_argument("--out", required=True, help="output dataset (JSON lines)")
    p_gen.add_argument("--seed", type=int, help="override the config seed")

    p_train = sub.add_parser("train", help="train one method on a dataset")
    p_train.add_argument("--config", help="run-config JSON path")
    p_train.add_argument("--data", required=True, help="dataset path")
    p_train.add_argument("--method", required=True, choices=METHODS)
    p_train.add_argument("--out", required=True,
                         help="output stem; writes <stem>.model.json (or .f/.g) + <stem>.report.json")
    p_train.add_argument("--seed", type=int, help="override the trainer seed")
    p_train.add_argument("--verbose", action="store_true",
                         help="also write <stem>.losscurve.csv")

    p_eval = sub.add_parser("evaluate", help="score model files on a dataset")
    p_eval.add_argument("--data", required=True, help="dataset path")
    p_eval.add_argument("--model", required=True, action="append",
                        help="model JSON path (repeatable)")
    p_eval.add_argument("--labels", choices=("true", "obs"), default="true",
                        help="score against y_true (default) or y_obs")

    p_exp = sub.add_parser("experiment", help="run the benchmark grid")
    p_exp.add_argument("--config", help="run-config JSON path")
    p_exp.add_argument("--out", help="output directory (default: experiment.out_dir)")
    p_exp.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes (default: logical cores)")
    p_exp.add_argument("--seed", type=int,
                       help="run the grid for this single seed only")

    p_var = sub.add_parser("variance-report",
                           help="IPS/ICVR variance diagnostics on a dataset")
    p_var.add_argument("--data", required=True, help="dataset path (needs ground truth)")
    p_var.add_argument("--model", required=True, action="append",
                       help="model JSON path (repeatable; augmented models give ICVR)")
    p_var.add_argument("--clip-epsilon", type=float, default=0.01,
                       help="threshold used for the clip-activation counts")

    return parser


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    return cfg


def load_model_file(path):
    """Load a model file: a linear sigmoid model or a DFM pair."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and doc.get("kind") == "dfm":
        return DfmModel.from_json_dict(doc)
    if isinstance(doc, dict) and "weights" in doc:
        return LinearSigmoidModel.from_json_dict(doc)
    raise ConfigError(f"{path}: not a recognized model file")


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    synth = cfg.synth
    if args.seed is not None:
        import dataclasses

        synth = dataclasses.replace(synth, seed=args.seed)
    synth.validate()
    ds = generate(synth)
    write_dataset(ds, args.out)
    print(f"n={ds.n}")
    print(f"mean_propensity={np.mean(ds.theta_true):.10g}")
    print(f"positive_rate={np.mean(ds.y_obs):.10g}")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    train_cfg = cfg.train_config(args.method)
    if args.seed is not None:
        import dataclasses

        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    train_cfg.validate()
    ds = read_dataset(args.data)
    stem = args.out

    if args.method in ("dla", "nn-dla"):
        f, g, report = train_dla(ds, train_cfg)
        f.save(f"{stem}.f.json")
        g.save(f"{stem}.g.json")
        print(f"model_f={stem}.f.json")
        print(f"model_g={stem}.g.json")
    elif args.method == "dfm":
        model, report = train_dfm(ds, train_cfg)
        model.save(f"{stem}.model.json")
        print(f"model={stem}.model.json")
    elif args.method == "naive":
        model, report = train_naive(ds, train_cfg)
        model.save(f"{stem}.model.json")
        print(f"model={stem}.model.json")
    else:
        model, report = train_oracle(ds, train_cfg)
        model.save(f"{stem}.model.json")
        print(f"model={stem}.model.json")

    report.save(f"{stem}.report.json")
    if args.verbose:
        atomic_write_text(f"{stem}.losscurve.csv", report.loss_curve_csv())
        print(f"loss_curve={stem}.losscurve.csv")
    print(f"epochs={report.epochs_run} final_loss={report.final_loss:.10g} "
          f"converged={str(report.converged).lower()}")
    return 0


def cmd_evaluate(args) -> int:
    ds = read_dataset(args.data)
    if args.labels == "true":
        labels = ds.y_true
        if labels is None:
            raise MissingGroundTruthError("dataset has no y_true labels")
    else:
        labels = ds.y_obs
        if labels is None:
            raise MissingGroundTruthError("dataset has no y_obs labels")
    for path in args.model:
        model = load_model_file(path)
        if isinstance(model, DfmModel):
            preds = model.predict_cvr(ds.x)
        elif model.augmented_with_elapsed:
            raise ConfigError(
                f"{path}: propensity models cannot be scored on test features "
                "(elapsed time is unavailable)")
        else:
            preds = predict_cvr(model, ds.x)
        print(f"model={path} log_loss={log_loss(preds, labels):.10g}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    exp = cfg.experiment
    out_dir = args.out or exp.out_dir
    if not out_dir:
        raise ConfigError("no output directory: pass --out or set experiment.out_dir")
    grid = cfg.experiment_grid()
    if args.seed is not None:
        import dataclasses

        grid = dataclasses.replace(grid, seeds=(args.seed,))
    grid.validate()
    table = run_experiment(grid, jobs=max(1, args.jobs), log=print)
    cells_path, agg_path = table.write(out_dir)
    print(f"cells_csv={cells_path}")
    print(f"aggregates_csv={agg_path}")
    n_cells = len(table.cells)
    print(f"done: {n_cells} cells, {table.n_failed} failed")
    return 0 if table.n_failed == 0 else 2


def cmd_variance_report(args) -> int:
    ds = read_dataset(args.data)
    if ds.theta_true is None or ds.gamma_true is None:
        raise MissingGroundTruthError(
            "variance report needs stored gamma_true and theta_true")
    clip = ClipPolicy(args.clip_epsilon)
    print(f"n={ds.n}")
    print(f"clip_activations_theta={clip.count_clipped(ds.theta_true)}")
    print(f"clip_activations_gamma={clip.count_clipped(ds.gamma_true)}")
    for path in args.model:
        model = load_model_file(path)
        if isinstance(model, DfmModel):
            deltas = cross_entropy_deltas(model.predict_cvr(ds.x))
            v = ips_variance(ds.gamma_true, ds.theta_true, deltas)
            print(f"model={path} ips_variance={v:.10g}")
        elif model.augmented_with_elapsed:
            if ds.e is None:
                raise MissingGroundTruthError("dataset has no elapsed times")
            deltas = cross_entropy_deltas(predict_propensity(model, ds.x, ds.e))
            v = icvr_variance(ds.theta_true, ds.gamma_true, deltas)
            print(f"model={path} icvr_variance={v:.10g}")
        else:
            deltas = cross_entropy_deltas(predict_cvr(model, ds.x))
            v = ips_variance(ds.gamma_true, ds.theta_true, deltas)
            print(f"model={path} ips_variance={v:.10g}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "variance-report": cmd_variance_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DelayCvrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
