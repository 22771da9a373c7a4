"""Command-line entry point: ``intrapath <command> --config PATH [--out DIR] [--seed N] [--threads N]``."""

import argparse
import logging
import os
import sys

from . import _accel
from .artifacts import MissingArtifact
from .config import ConfigError, load_config
from .market_data import DataError
from .pipeline import COMMANDS, run_command

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MISSING = 3

log = logging.getLogger("intrapath")


def build_parser():
    parser = argparse.ArgumentParser(prog="intrapath", description="Intraday price path forecasting and strategy backtests.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="INI run configuration")
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--threads", type=int, default=None, help="override [run] threads (advisory)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
        threads = args.threads if args.threads is not None else cfg.threads
        if threads < 1:
            raise ConfigError("--threads: must be >= 1")
        log.info("backend %s, %d thread(s) requested; kernels run single-threaded", _accel.backend_name(), threads)
        manifest = run_command(args.command, cfg, os.path.abspath(args.out))
    except (ConfigError, DataError) as exc:
        print(f"intrapath {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except MissingArtifact as exc:
        print(f"intrapath {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISSING
    print(f"{args.command}: {len(manifest['artifacts'])} artifacts, digest {manifest['digest'][:16]}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
