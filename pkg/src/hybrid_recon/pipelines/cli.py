"""``hybrid-recon <subcommand> --config <path> [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import runner
from .config import load_config

SUBCOMMANDS = ("simulate", "train", "infer", "evaluate", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-recon",
                                     description="Two-stage hybrid-learning reconstruction on simulated data.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", default=None, help="output directory (default: out_dir from the config)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"hybrid-recon: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = args.out or cfg.out_dir
    try:
        if args.subcommand == "simulate":
            runner.simulate(cfg, out)
        elif args.subcommand == "train":
            runner.train(cfg, out)
        elif args.subcommand == "infer":
            runner.infer(cfg, out)
        elif args.subcommand == "evaluate":
            rep = runner.evaluate(cfg, out)
            print(rep.summary(cfg.header()), end="")
        else:
            print(runner.report(cfg, out), end="")
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"hybrid-recon {args.subcommand}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
