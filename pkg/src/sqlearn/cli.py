"""``sqlearn`` command-line entry point.

Exit codes: 0 on success (a recorded line-search failure still counts as
success), 2 for configuration errors, 3 for data errors.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import config as sqconfig
from . import data as sqdata
from . import experiments
from .report import write_histogram_csv, write_json

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_overrides(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON experiment file; flags below override it")
    sp.add_argument("--p", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--objective", choices=sqconfig.OBJECTIVES)
    sp.add_argument("--algorithm")
    sp.add_argument("--loss", choices=("squared", "logistic"))
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--decay", type=float)
    sp.add_argument("--decay-period", dest="decay_period", type=int)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--output", help="report path (stdout when omitted)")
    sp.add_argument("--histogram-csv", dest="histogram_csv",
                    help="also write histogram bins as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqlearn",
        description="Superquantile (CVaR) learning experiments for linear models.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (("train", "fit the configured objective and score it on the test split"),
                        ("cv", "choose p by k-fold cross-validation, compare with ERM"),
                        ("shift-sweep", "alpha-rebalancing sweep, ERM vs superquantile"),
                        ("mu-sweep", "smoothing-parameter sweep with L-BFGS")):
        sp = sub.add_parser(name, help=help_)
        _add_overrides(sp)
        if name == "shift-sweep":
            sp.add_argument("--alphas", type=_floats, help="comma-separated rebalancing levels")
        if name == "mu-sweep":
            sp.add_argument("--mus", type=_floats, help="comma-separated smoothing values")

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV plus its schema")
    g.add_argument("kind", choices=("regression", "classification"))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--d", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--class-sep", dest="class_sep", type=float, default=2.0)
    g.add_argument("--positive-fraction", dest="positive_fraction", type=float, default=0.5)
    g.add_argument("--output", required=True, help="CSV path; the schema goes to PATH.schema.json")
    return parser


def _load_config(args) -> sqconfig.ExperimentConfig:
    cfg = sqconfig.load(args.config) if args.config else sqconfig.from_dict({})
    return sqconfig.apply_overrides(cfg, args)


def _emit(report: dict, cfg, args) -> None:
    path = cfg.output
    if path:
        write_json(report, path)
    else:
        json.dump(report, sys.stdout, indent=2, sort_keys=True, allow_nan=False)
        sys.stdout.write("\n")
    if args.histogram_csv:
        write_histogram_csv(report, args.histogram_csv)


def _generate(args) -> int:
    if args.n < 2:
        raise sqconfig.ConfigError("--n must be at least 2")
    if args.kind == "regression":
        D, _ = sqdata.synth_regression(args.n, args.d or 40, args.seed)
    else:
        D = sqdata.synth_classification(args.n, args.d or 5, args.class_sep, args.seed,
                                        positive_fraction=args.positive_fraction)
    schema = sqdata.write_csv(D, args.output)
    with open(args.output + ".schema.json", "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")
    return EXIT_OK


def run(args) -> int:
    if args.command == "generate":
        return _generate(args)
    cfg = _load_config(args)
    if args.command == "train":
        report = experiments.cmd_train(cfg)
    elif args.command == "cv":
        _, report = experiments.cmd_cv(cfg)
    elif args.command == "shift-sweep":
        report = experiments.cmd_shift_sweep(cfg, args.alphas)
    else:
        report = experiments.cmd_mu_sweep(cfg, args.mus)
    for msg in report.get("warnings", []):
        print(f"warning: {msg}", file=sys.stderr)
    _emit(report, cfg, args)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except sqconfig.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except sqdata.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
