"""Command-line interface: simulate, train, generate, impute, evaluate and export.

Exit codes: 0 on success, 1 on a usage error, 2 on a data error (missing or
unreadable file, schema mismatch, malformed model).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .adversarial import POLICIES, adversarial_train
from .adversarial import write_trace as write_adversarial_trace
from .copycat import copycat_train
from .copycat import write_trace as write_copycat_trace
from .data import SchemaError, infer_schema, load_dataset, read_dataset, save_dataset
from .evaluation import (
    DOMAINS,
    density_grid,
    empirical_chi2,
    export_folds,
    impute_benchmark,
    simulate,
    w2_squared,
    write_density_grid,
    write_report,
)
from .generate import impute_dataset, is_support_preserving, sample
from .losses import LOSSES
from .serialize import ModelFormatError, load_model, save_model
from .trees import DecisionTree, GenerativeTree, TreeError

logger = logging.getLogger("gentrees")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def _load_gt(path) -> GenerativeTree:
    model = load_model(path)
    if not isinstance(model, GenerativeTree):
        raise DataError(f"{path} holds a decision tree, not a generative tree")
    return model


def _load_dt(path) -> DecisionTree:
    model = load_model(path)
    if not isinstance(model, DecisionTree):
        raise DataError(f"{path} holds a generative tree, not a decision tree")
    return model


def _emit(result, out):
    text = json.dumps(result, indent=1, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command}: --seed is required")


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    _require_seed(args)
    save_dataset(simulate(args.domain, args.seed), args.out)


def cmd_train(args):
    if args.splits < 0:
        raise UsageError("train: --splits must be nonnegative")
    if not 0.0 < args.prior < 1.0:
        raise UsageError("train: --prior must lie in (0, 1)")
    real = read_dataset(args.data)
    if args.mode == "copycat":
        result = copycat_train(real, args.loss, args.prior, args.splits, args.seed)
        write_trace = write_copycat_trace
    else:
        result = adversarial_train(
            real,
            args.loss,
            args.prior,
            rounds=args.splits,
            disc_splits_per_round=args.disc_splits,
            seed=args.seed,
            allow_degenerate=not args.support_preserving,
            p_min=args.p_min,
            policy=POLICIES[args.policy](),
        )
        write_trace = write_adversarial_trace
        logger.info("chi-square on the final discriminator: %g (uniform generator %g)", result.chi2_final, result.chi2_initial)
    save_model(result.gt, args.model_out)
    if args.dt_out:
        save_model(result.dt, args.dt_out)
    if args.trace_out:
        write_trace(result.trace, args.trace_out)


def cmd_generate(args):
    _require_seed(args)
    if args.n < 0:
        raise UsageError("generate: --n must be nonnegative")
    save_dataset(sample(_load_gt(args.model), args.n, args.seed), args.out)


def cmd_impute(args):
    _require_seed(args)
    gt = _load_gt(args.model)
    if not is_support_preserving(gt):
        logger.warning("model is not support-preserving: some rows may be completed inside leaves of zero probability")
    data = load_dataset(args.data, gt.schema)
    filled = impute_dataset(gt, data, args.seed)
    # observed cells keep their original text; only missing cells are written anew
    with open(args.data, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        raw = [r for r in reader if r]
    miss = data.missing
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(raw):
            out = list(row)
            for j in np.flatnonzero(miss[i]):
                out[j] = gt.schema[j].format(filled.values[i, j])
            writer.writerow(out)


def cmd_eval_chi2(args):
    dt = _load_dt(args.dt)
    real = load_dataset(args.real, dt.tree.schema)
    fake = load_dataset(args.fake, dt.tree.schema)
    _emit({"chi2": empirical_chi2(dt, real, fake)}, args.out)


def cmd_eval_w2(args):
    schema = _load_gt(args.model).schema if args.model else infer_schema(args.a, args.b)
    a, b = load_dataset(args.a, schema), load_dataset(args.b, schema)
    _emit({"w2_squared": w2_squared(a, b)}, args.out)


def cmd_eval_impute_bench(args):
    _require_seed(args)
    if (args.data is None) == (args.domain is None):
        raise UsageError("eval impute-bench: give exactly one of --data and --domain")
    if args.jobs < 1 or args.folds < 2:
        raise UsageError("eval impute-bench: --jobs must be >= 1 and --folds >= 2")
    data = args.domain if args.domain else read_dataset(args.data)
    config = {"loss": args.loss, "prior": args.prior, "splits": args.splits}
    report = impute_benchmark(data, tuple(args.q), args.folds, config, args.seed, args.jobs)
    if args.out:
        write_report(report, args.out)
    _emit(report, None)


def cmd_density_grid(args):
    gt = _load_gt(args.model)
    try:
        grid, xe, ye = density_grid(gt, args.x, args.y, args.res)
    except KeyError as exc:
        raise DataError(f"unknown feature {exc}") from None
    write_density_grid(args.out, grid, xe, ye)


def cmd_export_folds(args):
    _require_seed(args)
    if args.folds < 2:
        raise UsageError("export-folds: --folds must be >= 2")
    for path in export_folds(read_dataset(args.data), args.folds, args.splits, args.seed, args.out_dir):
        print(path)


# ---------------------------------------------------------------- parser


def _common(p):
    p.add_argument("--config", help="JSON file with default values for this command's flags; flags given on the command line win")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> _Parser:
    parser = _Parser(prog="gentrees", description="Generative trees for tabular data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True
    losses = sorted(LOSSES)

    p = sub.add_parser("simulate", help="write a simulated two-dimensional domain as CSV")
    p.add_argument("--domain", required=True, choices=DOMAINS, help="domain name")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a generative tree on a CSV dataset")
    p.add_argument("--mode", choices=("copycat", "adversarial"), default="copycat", help="training procedure")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--loss", choices=losses, default="matusita", help="proper loss used by the discriminator")
    p.add_argument("--prior", type=float, default=0.5, help="prior of the real class, in (0, 1)")
    p.add_argument("--splits", type=int, default=0, help="copycat: splits; adversarial: rounds of one generator split each")
    p.add_argument("--support-preserving", action="store_true", help="adversarial: keep every Bernoulli inside [p-min, 1 - p-min]")
    p.add_argument("--p-min", type=float, default=1e-3, help="adversarial: Bernoulli floor with --support-preserving")
    p.add_argument("--disc-splits", type=int, default=1, help="adversarial: discriminator splits per round")
    p.add_argument("--policy", choices=sorted(POLICIES), default="boundary", help="adversarial: generator candidate splits")
    p.add_argument("--seed", type=int, help="seed recorded in the model metadata (training itself is deterministic)")
    p.add_argument("--model-out", required=True, help="generative tree JSON")
    p.add_argument("--dt-out", help="decision tree JSON")
    p.add_argument("--trace-out", help="per-split trace CSV")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample rows from a generative tree")
    p.add_argument("--model", required=True, help="generative tree JSON")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("impute", help="fill the missing cells of a CSV with a generative tree")
    p.add_argument("--model", required=True, help="generative tree JSON")
    p.add_argument("--data", required=True, help="CSV with missing cells written as '?' or empty")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("eval", help="evaluation commands")
    esub = p.add_subparsers(dest="metric", parser_class=_Parser, metavar="METRIC")
    esub.required = True
    e = esub.add_parser("chi2", help="chi-square of fake against real leaf frequencies of a decision tree")
    e.add_argument("--dt", required=True, help="decision tree JSON")
    e.add_argument("--real", required=True, help="real CSV")
    e.add_argument("--fake", required=True, help="generated CSV")
    e.add_argument("--out", help="also write the JSON result here")
    _common(e)
    e.set_defaults(func=cmd_eval_chi2)
    e = esub.add_parser("w2", help="exact squared Wasserstein-2 cost between two equal-size CSVs")
    e.add_argument("--a", required=True, help="first CSV")
    e.add_argument("--b", required=True, help="second CSV")
    e.add_argument("--model", help="take the schema from this generative tree instead of inferring it")
    e.add_argument("--out", help="also write the JSON result here")
    _common(e)
    e.set_defaults(func=cmd_eval_w2)
    e = esub.add_parser("impute-bench", help="cross-validated MCAR imputation benchmark against mean/mode")
    e.add_argument("--data", help="CSV dataset")
    e.add_argument("--domain", choices=DOMAINS, help="simulated domain instead of --data")
    e.add_argument("--q", type=float, nargs="+", default=[0.2], help="missingness rates")
    e.add_argument("--folds", type=int, default=5, help="number of folds")
    e.add_argument("--splits", type=int, default=10000, help="copycat split cap per fold")
    e.add_argument("--loss", choices=losses, default="matusita", help="proper loss")
    e.add_argument("--prior", type=float, default=0.5, help="prior of the real class")
    e.add_argument("--seed", type=int, help="random seed (required)")
    e.add_argument("--jobs", type=int, default=1, help="folds trained in parallel")
    e.add_argument("--out", help="report CSV")
    _common(e)
    e.set_defaults(func=cmd_eval_impute_bench)

    p = sub.add_parser("density-grid", help="export the exact generator density over two real features")
    p.add_argument("--model", required=True, help="generative tree JSON")
    p.add_argument("--x", required=True, help="feature on the horizontal axis")
    p.add_argument("--y", required=True, help="feature on the vertical axis")
    p.add_argument("--res", type=int, default=100, help="cells per axis")
    p.add_argument("--out", required=True, help="output CSV grid, one row per y cell")
    _common(p)
    p.set_defaults(func=cmd_density_grid)

    p = sub.add_parser("export-folds", help="write train, test and generated CSVs per fold")
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--folds", type=int, default=5, help="number of folds")
    p.add_argument("--splits", type=int, default=1000, help="copycat splits per fold")
    p.add_argument("--seed", type=int, help="random seed (required)")
    p.add_argument("--out-dir", required=True, help="output directory")
    _common(p)
    p.set_defaults(func=cmd_export_folds)
    return parser


def _subparsers(node):
    for a in node._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices
    return {}


def _defer_required(node):
    """Move argparse's required checks after the config merge, so a config file can supply them."""
    node.late_required = [a for a in node._actions if a.required and a.option_strings]
    for a in node.late_required:
        a.required = False
        a.help = f"{a.help} (required)"
    for child in _subparsers(node).values():
        _defer_required(child)


def _selected_parser(parser, args):
    """The (sub)parser that handled ``args``."""
    node = parser
    for key in ("command", "metric"):
        name = getattr(args, key, None)
        if name is None:
            break
        node = _subparsers(node)[name]
    return node


def _apply_config(sub, args):
    try:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.config}: invalid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise DataError(f"{args.config}: expected a JSON object")
    explicit = {a.dest: a.default for a in sub._actions}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in explicit or dest in ("config", "help", "verbose"):
            raise UsageError(f"{args.config}: unknown key {key!r}")
        # a flag still at its default was not given on the command line
        if getattr(args, dest) == explicit[dest]:
            setattr(args, dest, value)


def run(argv=None) -> int:
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _defer_required(parser)
    try:
        args = parser.parse_args(argv)
        sub = _selected_parser(parser, args)
        if args.config:
            _apply_config(sub, args)
        missing = [a.option_strings[0] for a in sub.late_required if getattr(args, a.dest) is None]
        if missing:
            raise UsageError(f"{sub.prog}: the following arguments are required: {', '.join(missing)}")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SchemaError, ModelFormatError, TreeError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
