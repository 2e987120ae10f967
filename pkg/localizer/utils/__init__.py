"""
Utility modules for the sparse input localizer

model_io is imported directly (it depends on services.lti_core).
"""

from .linalg import (
    ensure_finite,
    max_column_sum_norm,
    max_row_sum_norm,
    numerical_rank,
    orthogonal_projector_complement,
    pinv,
    singular_values,
    spectral_norm,
)
from .factor_cache import FactorCache
from .report_io import dumps, flatten, write_csv, write_json

__all__ = [
    "ensure_finite",
    "max_column_sum_norm",
    "max_row_sum_norm",
    "numerical_rank",
    "orthogonal_projector_complement",
    "pinv",
    "singular_values",
    "spectral_norm",
    "FactorCache",
    "dumps",
    "flatten",
    "write_csv",
    "write_json",
]
