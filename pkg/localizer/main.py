"""
Entry point for the sparse input localizer CLI

Commands live in the commands package; this module builds the parser, merges
config-file defaults, sets up logging and maps failures to exit codes.
"""

import argparse
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from commands import register_commands
from exceptions import LocalizerError, NumericalError
from utils.model_io import load_config_file

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

# config-file keys whose flag stores under another name
_CONFIG_ALIASES = {"lambda": "lam"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="Report path (JSON goes to stdout when omitted)")
    common.add_argument("--format", choices=["json", "csv"], help="Report format (default: json)")
    common.add_argument("--config", help="JSON file of flag defaults (flags take precedence)")
    common.add_argument("-v", "--verbose", action="store_true", default=None, help="Debug logging")

    parser = argparse.ArgumentParser(
        prog="localizer",
        description="Localize sparse unknown inputs in discrete-time LTI systems",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s analyze --system sys.json --active-set 0,3 --horizon 20
  %(prog)s mic --system sys.json --active-set 0 --horizon 30 --trace gains.csv
  %(prog)s simulate --system sys.json --horizon 40 --m-star 2 --seed 7 -o y.csv
  %(prog)s estimate --system sys.json --measurements y.csv --lambda 0.05
  %(prog)s sweep --trials 50 --lambda-grid "auto(12)" --format csv -o trials.csv

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 not converged
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    register_commands(subparsers, [common])
    return parser


def apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill flags left unset from the --config file."""
    if not args.config:
        return args
    for key, value in load_config_file(args.config).items():
        key = _CONFIG_ALIASES.get(key, key)
        if getattr(args, key, None) is None:
            setattr(args, key, value)
    return args


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        args = apply_config(args)
    except LocalizerError as e:
        configure_logging(False)
        logger.error(e.message)
        return EXIT_VALIDATION

    configure_logging(bool(args.verbose))
    args.format = args.format or "json"
    if args.format == "csv" and not args.output:
        parser.error("--format csv needs --output")

    try:
        return args.handler(args)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e.message}")
        logger.debug(f"Details: {e.details}")
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except LocalizerError as e:
        logger.error(e.message)
        logger.debug(f"Details: {e.details}")
        return EXIT_VALIDATION
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
