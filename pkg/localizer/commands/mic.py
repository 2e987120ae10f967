"""
Incoherence command - time- and frequency-domain mutual incoherence, the
theory regularization weight and the error bounds for one active set.
"""

import logging

from dependencies import emit, get_active_set, get_system
from exceptions import PreconditionError
from services.incoherence import incoherence_report
from utils.report_io import write_csv

logger = logging.getLogger(__name__)

TRACE_HEADER = ["omega", "j", "gain"]


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "mic",
        parents=parents,
        help="Mutual incoherence, lambda_T, beta_min and error bounds",
    )
    parser.add_argument("--system", help="System JSON file")
    parser.add_argument("--active-set", help="Comma-separated source indices (0-based)")
    parser.add_argument("--horizon", type=int, help="Horizon N")
    parser.add_argument("--sigma", type=float, help="Noise level (default: from R)")
    parser.add_argument("--delta", type=float, help="Confidence slack for lambda_T")
    parser.add_argument("--delay", type=int, help="Delay d for beta_min and bounds (default: eta_S)")
    parser.add_argument("--grid-points", type=int, help="Frequency grid size on [0, pi]")
    parser.add_argument(
        "--exclude-x0", dest="include_x0", action="store_false", default=None,
        help="Drop the initial state from the time-domain design",
    )
    parser.add_argument("--trace", help="Write per-frequency gains (omega, j, gain) to this CSV")
    parser.add_argument("--sensor-rows", help="Keep only these rows of C")
    parser.set_defaults(handler=run)


def run(args) -> int:
    system = get_system(args)
    s = get_active_set(args, system)
    if args.horizon is None:
        raise PreconditionError("mic", "--horizon is required")
    report, trace_rows = incoherence_report(
        system,
        s,
        int(args.horizon),
        sigma=args.sigma,
        delta=args.delta,
        d=args.delay,
        grid_points=args.grid_points,
        include_initial_state=args.include_x0 is not False,
        trace=bool(args.trace),
    )
    for note in report.notes:
        logger.warning(note)
    if not report.a3_satisfied:
        logger.warning(f"Incoherence condition fails: alpha = {report.alpha_implied:.4g} >= 1")

    if args.trace:
        write_csv(
            args.trace,
            ({"omega": omega, "j": j, "gain": gain} for omega, j, gain in trace_rows),
            TRACE_HEADER,
        )
    emit(args, report)
    return 0
