"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from .errors import ConfigError, StageError
from .pipeline import STAGES, Experiment, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog="deltaboot", description="Delta method vs. bootstrap uncertainty experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train the delta-method repetition networks",
        "bootstrap": "train the bootstrap ensemble and compute its sigmas",
        "delta": "eigendecompose the OPG matrices and compute delta sigmas",
        "compare": "write uncertainty tables and regressions",
        "sweep": "sweep over K and B and emit plots",
        "run": "run the full pipeline with timing",
    }
    for name in (*STAGES, "run"):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output directory (default: $DELTABOOT_OUT or the config's output_dir)")
        p.add_argument("--threads", type=int, help="BLAS threads and ensemble workers")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve(args):
    cfg = config_mod.load(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            out = run_experiment(cfg, args.out)
        else:
            exp = Experiment(cfg, args.out)
            exp.run_stages((args.command,))
            out = exp.out
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
