"""
Structural analysis command - input/state delays, invariant zeros and the
delayed-recovery certificate for one active set.
"""

import logging

from dependencies import emit, get_active_set, get_system
from services.structure import analyze_structure

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "analyze",
        parents=parents,
        help="Delays, invariant zeros and recovery certificate for an active set",
    )
    parser.add_argument("--system", help="System JSON file")
    parser.add_argument("--active-set", help="Comma-separated source indices (0-based)")
    parser.add_argument("--horizon", type=int, help="Horizon N for the certificate at d = eta_S")
    parser.add_argument("--d-cap", type=int, help="Largest delay searched (default: n)")
    parser.add_argument("--sensor-rows", help="Keep only these rows of C")
    parser.set_defaults(handler=run)


def run(args) -> int:
    system = get_system(args)
    s = get_active_set(args, system)
    report = analyze_structure(system, s, n_horizon=args.horizon, d_cap=args.d_cap)
    for note in report.notes:
        logger.warning(note)
    if report.has_invariant_zeros:
        logger.warning(f"Invariant zeros at {list(report.zero_check.zeros)}: inputs are not recoverable")
    emit(args, report)
    return 0
