"""
Command line entry point: ``lvs-sim <experiment> --config <file> [options]``.

Exit status: 0 success, 2 configuration error, 3 infeasible scenario,
4 I/O error, including an unreadable ``--config`` file. CSV goes to
``--out`` or stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence

from .config import ExperimentName, parse_config
from .errors import ConfigError, LvsError, exit_code
from .experiments import run_experiment
from .montecarlo import THREADS_ENV

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lvs-sim",
        description="Location verification experiments for Rician fading channels.",
        epilog=f"{THREADS_ENV} caps the number of Monte Carlo worker threads.",
    )
    parser.add_argument("experiment", choices=[name.value for name in ExperimentName])
    parser.add_argument("--config", required=True, help="TOML scenario file")
    parser.add_argument("--seed", type=int, help="overrides [montecarlo] seed")
    parser.add_argument("--trials", type=int, help="overrides [montecarlo] trials; 0 for analytic only")
    parser.add_argument("--out", help="CSV output path (default: stdout)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config value; repeatable",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    return parser


def _log_level(verbosity: int) -> int:
    if verbosity >= 2:
        return logging.DEBUG
    if verbosity == 1:
        return logging.INFO
    return logging.WARNING


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=_log_level(args.verbose), format=LOG_FORMAT)
    try:
        with open(args.config, encoding="utf-8") as handle:
            text = handle.read()
        scenario, cfg = parse_config(
            text,
            source=args.config,
            overrides=args.overrides,
            experiment=args.experiment,
        )
        cfg = cfg.with_cli(seed=args.seed, trials=args.trials, output_path=args.out)
        return run_experiment(scenario, cfg)
    except ConfigError as exc:
        logger.error("invalid configuration:\n%s", exc)
        return exit_code(exc)
    except (LvsError, OSError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code(exc)
