"""
Experiment campaign command - lambda sweeps and the horizon, sensor-count and
frequency-vs-time incoherence studies.
"""

import logging
from typing import Any, Dict, List

from dependencies import dataclass_header, emit, parse_float_list, parse_index_list, parse_lambda_grid
from exceptions import PreconditionError
from services.experiments import (
    TRIAL_CSV_HEADER,
    SystemSource,
    TrialSpec,
    run_fd_td_study,
    run_horizon_study,
    run_sensor_study,
    run_sweep,
)
from services.trial_pool import PoolProgress, TrialPool

logger = logging.getLogger(__name__)

STUDIES = ("sweep", "horizon", "sensor", "fd_td")

# flag name -> TrialSpec field where they differ
_FIELD_ALIASES = {"system": "system_path", "horizon": "n_horizon"}


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "sweep",
        parents=parents,
        help="Seeded Monte-Carlo campaigns over lambda, horizon or sensor count",
    )
    parser.add_argument("--study", choices=STUDIES, help="Campaign to run (default: sweep)")
    parser.add_argument("--system", help="System JSON file (default: random Gaussian systems)")
    parser.add_argument("--n", type=int, help="States of random systems")
    parser.add_argument("--m", type=int, help="Sources of random systems")
    parser.add_argument("--p", type=int, help="Sensors of random systems")
    parser.add_argument("--m-star", type=int, help="Active sources per trial")
    parser.add_argument("--active-set", help="Fixed active set (default: drawn per trial)")
    parser.add_argument("--horizon", type=int, help="Horizon N")
    parser.add_argument("--sigma", type=float, help="Measurement noise level")
    parser.add_argument("--delta", type=float, help="Confidence slack for the theory rule")
    parser.add_argument("--seed", type=int, help="Campaign seed")
    parser.add_argument("--trials", type=int, help="Number of trials")
    parser.add_argument("--lambda-grid", help="'auto(k)', 'theory' or comma-separated values")
    parser.add_argument("--input-kind", choices=["uniform_box", "sinusoid"], help="Active input waveform")
    parser.add_argument("--x0-kind", choices=["zero", "standard_gaussian"], help="Initial state draw")
    parser.add_argument("--sensor-kind", choices=["gaussian", "first_states"], help="Random C construction")
    parser.add_argument("--sensor-rows", help="Keep only these rows of C")
    parser.add_argument("--max-spectral-radius", type=float, help="Rescale random A above this radius")
    parser.add_argument("--horizons", help="Comma-separated horizons for the horizon and fd_td studies")
    parser.add_argument("--sensor-counts", help="Comma-separated sensor counts for the sensor study")
    parser.add_argument("--workers", type=int, help="Concurrent trials")
    parser.set_defaults(handler=run)


def build_spec(args) -> TrialSpec:
    """
    TrialSpec from flags and config-file keys.

    Any attribute on `args` named like a TrialSpec field is used, so a config
    file may set fields without a flag (amplitudes, f_max, box_lo, ...).
    """
    values: Dict[str, Any] = {}
    for name, value in vars(args).items():
        key = _FIELD_ALIASES.get(name, name)
        if value is None or key not in TrialSpec.model_fields:
            continue
        values[key] = value

    if "active_set" in values:
        values["active_set"] = parse_index_list(values["active_set"])
        values.setdefault("m_star", len(values["active_set"]))
    if "sensor_rows" in values:
        values["sensor_rows"] = parse_index_list(values["sensor_rows"], "sensor-rows")
    if "amplitudes" in values:
        values["amplitudes"] = parse_float_list(values["amplitudes"], "amplitudes")
    if "lambda_grid" in values:
        values["lambda_grid"] = parse_lambda_grid(values["lambda_grid"])
    if "system_path" in values:
        values["system_source"] = SystemSource.FROM_FILE
    return TrialSpec(**values)


def _log_progress(progress: PoolProgress) -> None:
    step = max(progress.total // 10, 1)
    if progress.processed % step == 0 or progress.processed == progress.total:
        logger.info(f"{progress.label}: {progress.processed}/{progress.total} ({progress.percentage:.0f}%)")


def _int_list(value, name: str) -> List[int]:
    values = parse_index_list(value, name)
    if not values:
        raise PreconditionError("sweep", f"--{name} is required for this study")
    return values


def run(args) -> int:
    spec = build_spec(args)
    study = args.study or "sweep"
    pool = TrialPool(args.workers)
    logger.info(f"Running {study} study: {spec.trials} trial(s), seed {spec.seed}")

    if study == "sweep":
        report = run_sweep(spec, pool, progress_callback=_log_progress)
        for row in report.rows:
            if row.nonconverged:
                logger.warning(f"{row.nonconverged} trial(s) did not converge at {row.label}")
        emit(args, report, report.trial_rows(), TRIAL_CSV_HEADER)
        return 0

    if study == "horizon":
        rows = run_horizon_study(spec, _int_list(args.horizons, "horizons"), pool)
    elif study == "sensor":
        rows = run_sensor_study(spec, _int_list(args.sensor_counts, "sensor-counts"), pool)
    else:
        rows = run_fd_td_study(spec, _int_list(args.horizons, "horizons"), pool)

    table = [row.to_dict() for row in rows]
    emit(args, {"study": study, "spec": spec.model_dump(mode="json"), "rows": table}, table, dataclass_header(table))
    return 0
