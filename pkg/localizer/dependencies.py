"""
Shared inputs for CLI commands: loading files named by flags, parsing index
lists and writing reports in the requested format.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import settings
from exceptions import ModelValidationError, PreconditionError
from services.lti_core import LtiSystem, validate_active_set
from utils.model_io import load_measurements, load_system
from utils.report_io import dumps, flatten, write_csv, write_json

logger = logging.getLogger(__name__)


def parse_index_list(value: Union[None, str, Iterable[int]], name: str = "active-set") -> Optional[List[int]]:
    """
    Parse "0,2,5" (or an already-split list from a config file) into ints.

    Returns None when the value is absent.
    """
    if value is None:
        return None
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",") if part.strip()]
    else:
        parts = list(value)
    try:
        return [int(part) for part in parts]
    except (TypeError, ValueError):
        raise ModelValidationError(
            f"--{name} must be a comma-separated list of integers, got {value!r}",
            {"flag": name, "value": str(value)}
        )


def parse_float_list(value: Union[None, str, Iterable[float]], name: str) -> Optional[List[float]]:
    if value is None:
        return None
    parts = value.split(",") if isinstance(value, str) else list(value)
    try:
        return [float(part) for part in parts if str(part).strip()]
    except (TypeError, ValueError):
        raise ModelValidationError(
            f"--{name} must be a comma-separated list of numbers, got {value!r}",
            {"flag": name, "value": str(value)}
        )


def parse_lambda_grid(value: Union[None, str, Sequence[float]]) -> Union[None, str, List[float]]:
    """'auto(k)' and 'theory' pass through; anything else is a list of numbers."""
    if value is None or not isinstance(value, str):
        return None if value is None else [float(v) for v in value]
    text = value.strip()
    if text == "theory" or text.startswith("auto"):
        return text
    return parse_float_list(text, "lambda-grid")


def get_system(args) -> LtiSystem:
    if not getattr(args, "system", None):
        raise PreconditionError(args.command, "--system is required")
    system = load_system(args.system)
    rows = parse_index_list(getattr(args, "sensor_rows", None), "sensor-rows")
    if rows is not None:
        system = system.with_sensors(rows)
    return system


def get_active_set(args, system: LtiSystem, required: bool = True) -> Optional[Tuple[int, ...]]:
    indices = parse_index_list(getattr(args, "active_set", None))
    if indices is None:
        if required:
            raise PreconditionError(args.command, "--active-set is required")
        return None
    return validate_active_set(indices, system.m)


def get_measurements(args, system: LtiSystem) -> Tuple[np.ndarray, int]:
    """
    Measurements as a stacked vector plus the horizon they imply.

    Raises:
        ModelFileError: width differs from p (the message names the expected p)
        ModelValidationError: --horizon disagrees with the row count
    """
    if not getattr(args, "measurements", None):
        raise PreconditionError(args.command, "--measurements is required")
    rows = load_measurements(args.measurements, p=system.p)
    horizon = rows.shape[0] - 1
    if args.horizon is not None and int(args.horizon) != horizon:
        raise ModelValidationError(
            f"--horizon {args.horizon} does not match {rows.shape[0]} measurement rows (N={horizon})",
            {"horizon": int(args.horizon), "rows": rows.shape[0]}
        )
    return rows.ravel(), horizon


def resolve_output(path: Union[str, Path]) -> Path:
    """Relative report paths land under the configured output directory, when one is set."""
    path = Path(path)
    if settings.campaign.output_dir and not path.is_absolute():
        return settings.campaign.output_dir / path
    return path


def emit(args, report: Any, rows: Optional[List[Dict[str, Any]]] = None, header: Optional[Sequence[str]] = None) -> Optional[Path]:
    """
    Write a report to --output (or stdout for JSON).

    JSON is the report itself. CSV uses `rows`/`header` when the command has a
    natural table, and flattened key/value rows otherwise.
    """
    output = getattr(args, "output", None)
    output = resolve_output(output) if output else None
    if args.format == "csv":
        if rows is None:
            rows, header = flatten(report), ["key", "value"]
        return write_csv(output, rows, header)
    if output:
        return write_json(output, report)
    sys.stdout.write(dumps(report))
    return None


def dataclass_header(rows: Sequence[Mapping[str, Any]]) -> List[str]:
    return list(rows[0].keys()) if rows else []
