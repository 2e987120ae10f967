"""
System and measurement file formats

System files are JSON objects with "A", "B", "C" (row-major nested arrays)
and optional "Q", "R", "dt", "D", "name". Continuous-time "Ac"/"Bc" may be
given instead of "A"/"B" together with "dt"; they are discretized with a
zero-order hold. Measurement files are CSV with header `k,y1..yp`.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from exceptions import ModelFileError
from services.lti_core import LtiSystem, MeasurementBatch, discretize
from utils.report_io import write_csv, write_json

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise ModelFileError(str(path), "<file>", "does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ModelFileError(str(path), "<json>", f"is not valid JSON: {e.msg}", line=e.lineno)


def _matrix(path: Path, data: Mapping[str, Any], key: str, required: bool = True) -> Optional[np.ndarray]:
    if key not in data:
        if required:
            raise ModelFileError(str(path), key, "is missing")
        return None
    value = data[key]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [[value]]
    try:
        mat = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ModelFileError(str(path), key, "must be a numeric matrix")
    if mat.ndim == 1:
        mat = mat.reshape(1, -1) if key == "C" else mat.reshape(-1, 1)
    if mat.ndim != 2:
        raise ModelFileError(str(path), key, f"must be two-dimensional, got {mat.ndim} dimensions")
    return mat


def system_from_dict(data: Mapping[str, Any], source: str = "<memory>") -> LtiSystem:
    """Build an LtiSystem from the JSON layout, naming the offending key on failure."""
    path = Path(source)
    if not isinstance(data, Mapping):
        raise ModelFileError(source, "<root>", "must be a JSON object")

    dt = data.get("dt")
    if dt is not None and (isinstance(dt, bool) or not isinstance(dt, (int, float))):
        raise ModelFileError(source, "dt", "must be a number")

    if "Ac" in data or "Bc" in data:
        if "A" in data or "B" in data:
            raise ModelFileError(source, "Ac", "cannot be combined with A/B")
        if dt is None:
            raise ModelFileError(source, "dt", "is required with continuous-time Ac/Bc")
        a, b = discretize(_matrix(path, data, "Ac"), _matrix(path, data, "Bc"), float(dt))
    else:
        a = _matrix(path, data, "A")
        b = _matrix(path, data, "B")
    c = _matrix(path, data, "C")

    return LtiSystem.from_matrices(
        a, b, c,
        d=_matrix(path, data, "D", required=False),
        q=_matrix(path, data, "Q", required=False),
        r=_matrix(path, data, "R", required=False),
        dt=None if dt is None else float(dt),
        name=str(data.get("name", path.stem or "system")),
    )


def load_system(path: PathLike) -> LtiSystem:
    """
    Load a system file.

    Raises:
        ModelFileError: unreadable file, invalid JSON, missing or malformed key
        ModelValidationError: shapes inconsistent or D nonzero
    """
    path = Path(path)
    data = _read_json(path)
    sys = system_from_dict(data, str(path))
    logger.info(f"Loaded system '{sys.name}' from {path}: n={sys.n}, m={sys.m}, p={sys.p}")
    return sys


def save_system(sys: LtiSystem, path: PathLike) -> Path:
    return write_json(path, sys.to_dict())


def load_measurements(path: PathLike, p: Optional[int] = None) -> np.ndarray:
    """
    Read a measurement CSV into an (N+1) x p array.

    Args:
        path: CSV with header k,y1..yp
        p: Expected measurement width (C rows)

    Raises:
        ModelFileError: bad header, width mismatch, non-numeric cell or k out of sequence
    """
    path = Path(path)
    if not path.exists():
        raise ModelFileError(str(path), "<file>", "does not exist")

    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise ModelFileError(str(path), "header", "is missing", line=1)
        header = [h.strip() for h in header]
        width = len(header) - 1
        expected = ["k"] + [f"y{i}" for i in range(1, width + 1)]
        if width < 1 or header != expected:
            raise ModelFileError(str(path), "header", f"must be k,y1..yp, got {','.join(header)}", line=1)
        if p is not None and width != p:
            raise ModelFileError(
                str(path), "y", f"has {width} measurement columns, expected p={p}", line=1
            )

        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != width + 1:
                raise ModelFileError(
                    str(path), "row", f"has {len(row)} cells, expected {width + 1}", line=line_no
                )
            try:
                k = int(row[0])
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise ModelFileError(str(path), "row", "contains a non-numeric cell", line=line_no)
            if k != len(rows):
                raise ModelFileError(str(path), "k", f"expected {len(rows)}, got {k}", line=line_no)
            if not np.all(np.isfinite(values)):
                raise ModelFileError(str(path), "row", "contains a non-finite value", line=line_no)
            rows.append(values)

    if not rows:
        raise ModelFileError(str(path), "row", "no measurements found")
    return np.array(rows)


def save_measurements(batch: MeasurementBatch, path: PathLike) -> Path:
    """Write y as k,y1..yp rows."""
    header = ["k"] + [f"y{i}" for i in range(1, batch.per_step_dim + 1)]
    rows = (
        {"k": k, **{f"y{i + 1}": float(v) for i, v in enumerate(row)}}
        for k, row in enumerate(batch.as_rows())
    )
    return write_csv(path, rows, header)


def save_truth(batch: MeasurementBatch, path: PathLike, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Ground-truth sidecar (x0, u, support) next to a simulated measurement file."""
    return write_json(path, {**batch.to_dict(), **(extra or {})})


def load_truth(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    data = _read_json(path)
    for key in ("x0", "u", "support"):
        if key not in data:
            raise ModelFileError(str(path), key, "is missing")
    return data


def save_waveforms(path: PathLike, series: Mapping[str, np.ndarray]) -> Path:
    """
    Write per-source input series as CSV columns k,<name>...

    Shorter series are padded with empty cells.
    """
    names = list(series)
    length = max((len(np.ravel(series[name])) for name in names), default=0)
    rows = []
    for k in range(length):
        row: Dict[str, Any] = {"k": k}
        for name in names:
            values = np.ravel(series[name])
            row[name] = float(values[k]) if k < len(values) else None
        rows.append(row)
    return write_csv(path, rows, ["k"] + names)


def load_config_file(path: PathLike) -> Dict[str, Any]:
    """Read a JSON config file of CLI defaults (keys are flag names without dashes)."""
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ModelFileError(str(path), "<root>", "must be a JSON object")
    return {str(k).replace("-", "_"): v for k, v in data.items()}
