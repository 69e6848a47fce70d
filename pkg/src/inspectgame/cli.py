"""Command-line entry point: ``inspectgame <subcommand> [--config PATH] ...``.

Exit codes: 0 success, 2 solver non-convergence, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import ConfigError, ExperimentConfig, load_config
from .experiments import RUNNERS
from .model import DomainError
from .solver import ConvergenceError

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INVALID = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inspectgame", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", metavar="PATH", help="YAML experiment config")
        cmd.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        cmd.add_argument("--seed", metavar="U64", type=int, help="master seed (overrides sim.seed)")
        cmd.add_argument("--threads", metavar="INT", type=int, default=1,
                         help="worker threads for replications")
        cmd.add_argument("--dump-trajectories", action="store_true",
                         help="write sample trajectories with metadata")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError(["--seed: must be an unsigned 64-bit integer"])
            cfg = cfg.replace(sim=dataclasses.replace(cfg.sim, seed=args.seed))
        if args.threads < 1:
            raise ConfigError(["--threads: must be >= 1"])
        out = RUNNERS[args.command](cfg, out_dir=args.out, threads=args.threads,
                                    dump_trajectories=args.dump_trajectories)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ConfigError, DomainError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
