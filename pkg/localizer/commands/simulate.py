"""
Simulation command - seeded measurements for a system file, with a ground
truth sidecar for later scoring.
"""

import logging
from pathlib import Path

from dependencies import parse_index_list, resolve_output
from exceptions import PreconditionError
from services.experiments import SystemSource, TrialSpec, draw_scenario
from services.lti_core import validate_active_set
from utils.model_io import load_system, save_measurements, save_truth

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "simulate",
        parents=parents,
        help="Simulate noisy measurements with sparse active inputs",
    )
    parser.add_argument("--system", help="System JSON file")
    parser.add_argument("--horizon", type=int, help="Horizon N (N+1 samples are written)")
    parser.add_argument("--active-set", help="Active sources (default: --m-star drawn from the seed)")
    parser.add_argument("--m-star", type=int, help="Number of active sources to draw")
    parser.add_argument("--input-kind", choices=["uniform_box", "sinusoid"], help="Active input waveform")
    parser.add_argument("--x0-kind", choices=["zero", "standard_gaussian"], help="Initial state draw")
    parser.add_argument("--sigma", type=float, help="Measurement noise level when the system has no R")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--sensor-rows", help="Keep only these rows of C")
    parser.add_argument("--truth", help="Ground-truth JSON path (default: <output>.truth.json)")
    parser.add_argument("--no-truth", action="store_true", help="Do not write the ground-truth sidecar")
    parser.set_defaults(handler=run)


def truth_path(output: Path) -> Path:
    return output.with_name(f"{output.stem}.truth.json")


def run(args) -> int:
    if not args.system:
        raise PreconditionError("simulate", "--system is required")
    if not args.output:
        raise PreconditionError("simulate", "--output (measurement CSV) is required")
    if args.horizon is None:
        raise PreconditionError("simulate", "--horizon is required")

    system = load_system(args.system)
    values = {
        "system_source": SystemSource.FROM_FILE,
        "system_path": args.system,
        "n_horizon": args.horizon,
        "trials": 1,
    }
    for name in ("input_kind", "x0_kind", "sigma", "seed", "m_star"):
        if getattr(args, name, None) is not None:
            values[name] = getattr(args, name)
    active = parse_index_list(args.active_set)
    if active is not None:
        values["active_set"] = list(validate_active_set(active, system.m))
        values["m_star"] = len(active)
    rows = parse_index_list(args.sensor_rows, "sensor-rows")
    if rows is not None:
        values["sensor_rows"] = rows
    spec = TrialSpec(**values)

    system, s, measured = draw_scenario(spec, 0, system)
    output = resolve_output(args.output)
    save_measurements(measured, output)
    if not args.no_truth:
        save_truth(measured, args.truth or truth_path(output), {"seed": spec.seed, "sigma": spec.sigma})
    logger.info(f"Simulated {measured.horizon_n + 1} samples of '{system.name}' with active sources {list(s)}")
    return 0
