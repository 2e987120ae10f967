"""
Deterministic JSON and CSV report writers

Keys are sorted and floats are written with a fixed number of significant
digits, so re-running a command on identical inputs gives byte-identical files.
Non-finite floats become null.
"""

import csv
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from config import settings

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def to_jsonable(obj: Any) -> Any:
    """Convert numpy values, tuples, enums, paths, complex numbers and report objects."""
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [to_jsonable(float(obj.real)), to_jsonable(float(obj.imag))]
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def format_float(value: float, digits: Optional[int] = None) -> str:
    digits = digits or settings.campaign.float_digits
    if not math.isfinite(value):
        return "null"
    text = format(value, f".{digits}g")
    # keep floats recognisable as floats
    if "." not in text and "e" not in text:
        text += ".0"
    return text


def _encode(obj: Any, digits: int, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj, digits)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(key, ensure_ascii=False)}: {_encode(obj[key], digits, indent, level + 1)}"
            for key in sorted(obj)
        ]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, digits, indent, level + 1) for v in obj) + "]"
        items = [f"{pad}{_encode(v, digits, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps(obj: Any, digits: Optional[int] = None, indent: int = 2) -> str:
    """Serialize to JSON text with sorted keys and fixed-precision floats."""
    return _encode(to_jsonable(obj), digits or settings.campaign.float_digits, indent, 0) + "\n"


def write_json(path: PathLike, obj: Any, digits: Optional[int] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj, digits), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _csv_cell(value: Any, digits: int) -> str:
    value = to_jsonable(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value, digits)
    if isinstance(value, list):
        return " ".join(_csv_cell(v, digits) for v in value)
    return str(value)


def write_csv(
    path: PathLike,
    rows: Iterable[Dict[str, Any]],
    header: Sequence[str],
    digits: Optional[int] = None,
) -> Path:
    """Write dict rows through csv.DictWriter; columns outside `header` are dropped."""
    digits = digits or settings.campaign.float_digits
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(header), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _csv_cell(row.get(key), digits) for key in header})
    logger.info(f"Wrote {path}")
    return path


def flatten(obj: Any, prefix: str = "") -> List[Dict[str, Any]]:
    """Flatten a nested report into key/value rows (dotted keys) for CSV output."""
    obj = to_jsonable(obj)
    rows: List[Dict[str, Any]] = []
    if isinstance(obj, dict):
        for key in sorted(obj):
            rows.extend(flatten(obj[key], f"{prefix}.{key}" if prefix else key))
    else:
        rows.append({"key": prefix, "value": obj})
    return rows
