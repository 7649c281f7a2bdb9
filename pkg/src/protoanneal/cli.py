"""Command-line entry point.

Subcommands: gen-data, train-cluster, train-classify, train-regress,
predict, curves.  Exit codes: 0 success, 2 usage error, 3 data error,
4 numeric failure.  Training from a file is offline, so `--workers` may
parallelize sibling subtrees; results and curve files are identical for
any worker count under a fixed seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

import numpy as np

from . import data as dio
from .classify import fit_classifier
from .core import (
    AnnealingConfig,
    ConfigError,
    CorruptStateError,
    EmptyStreamError,
    NumericError,
    Trainer,
    anneal_fit,
    predict_region,
)
from .divergence import DivergenceKind, DomainError
from .models import TwoTimescaleStepsizes, fit_constant_regression, predict_value, two_timescale_fit
from .persist import SnapshotError, load_model, save_model
from .tree import SplitCriterion, Tree

__all__ = ["main", "run"]


class UsageError(Exception):
    pass


PRESETS = {
    "gauss4-2d": lambda seed: ("cluster", dio.four_gaussians_2d(seed)),
    "gauss2-1d": lambda seed: ("cluster", dio.two_gaussians_1d(seed)),
    "class2-2d": lambda seed: ("label", dio.two_class_2d(seed)),
    "class2-sep-2d": lambda seed: ("label", dio.separable_classes_2d(seed)),
    "skew2-2d": lambda seed: ("cluster", dio.skewed_pair_2d(seed)),
}
FUNCTION_PRESETS = ("sine-1d", "pwaffine-1d")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    defaults = AnnealingConfig()
    p.add_argument("--lambda-start", type=float, default=defaults.lambda_start)
    p.add_argument("--gamma", type=float, default=defaults.gamma)
    p.add_argument("--lambda-min", type=float, default=defaults.lambda_min)
    p.add_argument("--eps-converge", type=float, default=defaults.eps_converge)
    p.add_argument("--eps-merge", type=float, default=defaults.eps_merge)
    p.add_argument("--eps-idle", type=float, default=defaults.eps_idle)
    p.add_argument("--delta", type=float, default=None,
                   help="perturbation size (default: 0.01 x data scale)")
    p.add_argument("--stepsize-a", type=float, default=defaults.stepsize_a)
    p.add_argument("--stepsize-b", type=float, default=defaults.stepsize_b)
    p.add_argument("--k-max", type=int, default=defaults.k_max)
    p.add_argument("--max-iters-per-level", type=int,
                   default=defaults.max_iters_per_level)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="model snapshot to write")
    p.add_argument("--curves", help="performance-curve CSV to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--divergence", choices=[k.value for k in DivergenceKind],
                   default=DivergenceKind.SQUARED_EUCLIDEAN.value)
    p.add_argument("--tree", action="store_true", help="tree-structured training")
    p.add_argument("--multires", type=int, metavar="DEPTH",
                   help="resolution-pyramid depth (requires --tree)")
    p.add_argument("--k-target", default="4",
                   help="tree: codevectors per node before a split (per-level "
                        "comma list allowed)")
    p.add_argument("--lambda-stop", default="0.3,0.1,0.01",
                   help="tree: per-level temperature floor, comma list")
    p.add_argument("--max-depth", type=int, default=3)
    p.add_argument("--min-samples-split", type=int, default=100)
    p.add_argument("--workers", type=int, default=1,
                   help="parallel sibling-subtree workers (tree training only)")
    _add_config_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protoanneal",
        description="Progressive annealed prototype learning: clustering, "
                    "classification and regression on data streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a seeded synthetic dataset")
    g.add_argument("--preset", choices=sorted(PRESETS) + list(FUNCTION_PRESETS))
    g.add_argument("--spec", help="JSON mixture spec file (alternative to --preset)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    for name, help_text in (
        ("train-cluster", "anneal a codebook on unlabelled data"),
        ("train-classify", "anneal a labelled codebook (generative route)"),
        ("train-regress", "anneal a partition with per-cell output models"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_train_flags(p)
        if name == "train-regress":
            p.add_argument("--model-kind", choices=["constant", "affine"],
                           default="constant")

    p = sub.add_parser("predict", help="evaluate a saved model on probe rows")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("curves", help="re-emit a saved model's curve log")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    return parser


def _mixture_from_spec_file(path: str, seed: int) -> tuple[str, dio.MixtureSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    comps = [
        dio.MixtureComponent(
            np.array(c["mean"], dtype=float),
            np.array(c["stddev"], dtype=float),
            float(c["weight"]),
            c.get("label"),
        )
        for c in doc["components"]
    ]
    spec = dio.MixtureSpec(comps, seed=doc.get("seed", seed))
    return ("label" if spec.labelled else "cluster"), spec


def _cmd_gen_data(args) -> int:
    if bool(args.preset) == bool(args.spec):
        raise UsageError("gen-data needs exactly one of --preset / --spec")
    if args.preset in FUNCTION_PRESETS:
        if args.preset == "sine-1d":
            X, y = dio.sine_regression_1d(args.seed, args.n)
        else:
            X, y = dio.piecewise_affine_1d(args.seed, args.n)
        dio.write_dataset(args.out, X, y, output_kind="value")
        return 0
    if args.preset:
        kind, spec = PRESETS[args.preset](args.seed)
    else:
        kind, spec = _mixture_from_spec_file(args.spec, args.seed)
    X, labels = dio.sample_mixture(spec, args.n)
    if kind == "label":
        dio.write_dataset(args.out, X, labels, output_kind="label")
    else:
        dio.write_dataset(args.out, X, output_kind="none")
    return 0


def _config_from_args(args) -> AnnealingConfig:
    return AnnealingConfig(
        lambda_start=args.lambda_start,
        gamma=args.gamma,
        lambda_min=args.lambda_min,
        eps_converge=args.eps_converge,
        eps_merge=args.eps_merge,
        eps_idle=args.eps_idle,
        delta=args.delta,
        stepsize_a=args.stepsize_a,
        stepsize_b=args.stepsize_b,
        k_max=args.k_max,
        max_iters_per_level=args.max_iters_per_level,
    )


def _split_from_args(args) -> SplitCriterion:
    k_target = [int(v) for v in str(args.k_target).split(",")]
    lambda_stop = [float(v) for v in str(args.lambda_stop).split(",")]
    return SplitCriterion(
        k_target=k_target[0] if len(k_target) == 1 else k_target,
        lambda_stop=lambda_stop[0] if len(lambda_stop) == 1 else lambda_stop,
        max_depth=args.max_depth,
        min_samples_to_split=args.min_samples_split,
    )


def _validate_variant_flags(args, task: str, header: dio.DatasetHeader) -> None:
    if args.multires is not None and not args.tree:
        raise UsageError("--multires requires --tree")
    if task == "classify" and header.output != "label":
        raise UsageError("train-classify needs a dataset with output=label")
    if task == "regress" and header.output != "value":
        raise UsageError("train-regress needs a dataset with output=value")
    if task == "cluster" and header.output == "value":
        raise UsageError("train-cluster expects unlabelled data")


def _cmd_train(args, task: str) -> int:
    header, X, outputs = dio.read_dataset(args.input)
    _validate_variant_flags(args, task, header)
    divergence = DivergenceKind(args.divergence)
    config = _config_from_args(args)
    rng = np.random.default_rng(args.seed)

    if args.tree:
        tree_task = {
            "cluster": "cluster",
            "classify": "classify",
            "regress": "regress-constant",
        }[task]
        stepsizes = None
        if task == "regress" and args.model_kind == "affine":
            tree_task = "regress-affine"
            stepsizes = TwoTimescaleStepsizes(alpha_a=args.stepsize_a,
                                              alpha_b=args.stepsize_b)
        tree = Tree(
            config,
            _split_from_args(args),
            divergence,
            task=tree_task,
            seed=args.seed,
            pyramid_depth=args.multires,
            stepsizes=stepsizes,
        )
        tree.fit_offline(X, outputs, workers=args.workers)
        model = tree
        curve_log = tree.curve_log
    elif task == "cluster":
        model = anneal_fit(X, config, divergence, rng)
        curve_log = model.curve_log
    elif task == "classify":
        model, _ = fit_classifier(zip(X, outputs), config, divergence, rng)
        curve_log = model.curve_log
    else:
        pairs = zip(X, outputs)
        if args.model_kind == "affine":
            stepsizes = TwoTimescaleStepsizes(alpha_a=args.stepsize_a,
                                              alpha_b=args.stepsize_b)
            model = two_timescale_fit(pairs, config, stepsizes, divergence, rng)
        else:
            model = fit_constant_regression(pairs, config, divergence, rng)
        curve_log = model.curve_log

    save_model(args.out, model)
    if args.curves:
        dio.write_curves(args.curves, curve_log)
    return 0


def _predictor(model):
    if isinstance(model, Tree):
        return model.predict
    if model.model_kind is not None:
        return lambda x: predict_value(model, x)
    if model.labels is not None:
        from .classify import nn_predict

        return lambda x: nn_predict(model, x)
    return lambda x: predict_region(model, x)


def _format_prediction(value) -> str:
    if isinstance(value, tuple):  # tree cell: path plus cell index
        return f"{value[0]}:{value[1]}"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    _, X, _ = dio.read_dataset(args.input)
    predict = _predictor(model)
    with open(args.out, "w") as fh:
        for row in X:
            fh.write(_format_prediction(predict(row)) + "\n")
    return 0


def _cmd_curves(args) -> int:
    model = load_model(args.model)
    dio.write_curves(args.out, model.curve_log)
    return 0


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "gen-data":
            return _cmd_gen_data(args)
        if args.command == "train-cluster":
            return _cmd_train(args, "cluster")
        if args.command == "train-classify":
            return _cmd_train(args, "classify")
        if args.command == "train-regress":
            return _cmd_train(args, "regress")
        if args.command == "predict":
            return _cmd_predict(args)
        return _cmd_curves(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (dio.DatasetFormatError, SnapshotError, EmptyStreamError,
            OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, DomainError, CorruptStateError,
            FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


def main() -> None:
    sys.exit(run())
