"""Command line entry point: ``whitened-mcmc <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import DomainError, FormatError
from .config import EXPERIMENTS, load_config, parse_value
from .runners import run_experiment

log = logging.getLogger("whitened_mcmc")


def build_parser():
    parser = argparse.ArgumentParser(prog="whitened-mcmc", description="Run a sampling experiment from a config.")
    parser.add_argument("experiment", nargs="?", choices=EXPERIMENTS,
                        help="experiment to run (alternatively --experiment or the config key)")
    parser.add_argument("--experiment", dest="experiment_flag", choices=EXPERIMENTS)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--steps", type=int, help="total chain length per run, burn-in included")
    parser.add_argument("--beta", help="jump size; a comma list sets the fig1 beta grid")
    parser.add_argument("--grid", type=int, help="Darcy nodes per axis")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def overrides_from_args(args, experiment):
    over = {"seed": args.seed, "out": args.out, "steps": args.steps}
    if args.beta is not None:
        value = parse_value(args.beta)
        if experiment == "fig1_sweep":
            over["betas"] = value if isinstance(value, list) else [value]
        elif experiment == "convolution_acf":
            raise DomainError("convolution_acf tunes beta itself; --beta does not apply")
        else:
            over["beta"] = value
    if args.grid is not None:
        if experiment != "darcy_hier":
            raise DomainError("--grid applies to darcy_hier only")
        over["grid"] = args.grid
    for item in args.set:
        if "=" not in item:
            raise FormatError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        over[key.strip()] = parse_value(value)
    return over


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    experiment = args.experiment_flag or args.experiment
    try:
        if experiment is None and args.config is None:
            raise DomainError("give an experiment name or a config file")
        file_cfg = load_config(args.config, experiment) if args.config else None
        experiment = experiment or file_cfg.experiment
        cfg = load_config(args.config, experiment, overrides_from_args(args, experiment))
    except (DomainError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    log.info("running %s (%s)", cfg.experiment, cfg.header())
    try:
        result = run_experiment(cfg)
    except (DomainError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    paths = getattr(result, "paths", None) or {"table": result.path}
    for p in paths.values():
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
