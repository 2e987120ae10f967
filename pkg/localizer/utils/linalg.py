"""
Dense linear-algebra helpers shared by every service

All rank decisions in the package go through `rank_tolerance` so the
max(dim)*eps*sigma_max rule (or the configured override) is applied once.
"""

import logging
from typing import Optional

import numpy as np
import scipy.linalg

from config import settings
from exceptions import ModelValidationError, SvdFailureError

logger = logging.getLogger(__name__)


def ensure_finite(name: str, mat: np.ndarray) -> np.ndarray:
    """Return `mat` as a float (or complex) array, rejecting NaN/inf entries."""
    arr = np.asarray(mat)
    if not np.iscomplexobj(arr):
        arr = arr.astype(float)
    if not np.all(np.isfinite(arr)):
        raise ModelValidationError(
            f"{name} contains non-finite entries",
            {"name": name, "shape": list(arr.shape)}
        )
    return arr


def singular_values(mat: np.ndarray) -> np.ndarray:
    """Singular values in descending order (empty for empty matrices)."""
    if mat.size == 0:
        return np.zeros(0)
    try:
        return scipy.linalg.svdvals(mat)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SvdFailureError(mat.shape, str(e))


def rank_tolerance(
    mat_shape: tuple,
    sigma_max: float,
    rank_tol: Optional[float] = None
) -> float:
    """
    Resolve the absolute threshold below which singular values count as zero.

    Args:
        mat_shape: Shape of the matrix being decomposed
        sigma_max: Its largest singular value
        rank_tol: Explicit override; falls back to the configured value, then
            to max(dim) * machine epsilon * sigma_max

    Returns:
        Absolute tolerance
    """
    if rank_tol is not None:
        return rank_tol
    if settings.analysis.rank_tol is not None:
        return settings.analysis.rank_tol
    return max(mat_shape) * np.finfo(float).eps * sigma_max


def numerical_rank(mat: np.ndarray, rank_tol: Optional[float] = None) -> int:
    """Number of singular values above the rank tolerance."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0
    s = singular_values(mat)
    tol = rank_tolerance(mat.shape, s[0], rank_tol)
    return int(np.sum(s > tol))


def pinv(mat: np.ndarray, rank_tol: Optional[float] = None) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse through a thin SVD.

    Singular values at or below the rank tolerance are treated as zero, so the
    result satisfies the four Penrose identities up to that tolerance.

    Args:
        mat: Real or complex matrix with finite entries
        rank_tol: Absolute singular value cutoff override

    Returns:
        Matrix of shape mat.T.shape
    """
    mat = ensure_finite("matrix", mat)
    rows, cols = mat.shape
    if mat.size == 0:
        return np.zeros((cols, rows), dtype=mat.dtype)

    try:
        u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        # gesdd occasionally fails to converge where gesvd does not
        try:
            u, s, vh = scipy.linalg.svd(mat, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as e:
            raise SvdFailureError(mat.shape, str(e))

    tol = rank_tolerance(mat.shape, s[0] if s.size else 0.0, rank_tol)
    keep = s > tol
    if not np.any(keep):
        return np.zeros((cols, rows), dtype=mat.dtype)

    inv_s = 1.0 / s[keep]
    return (vh[keep].conj().T * inv_s) @ u[:, keep].conj().T


def spectral_norm(mat: np.ndarray) -> float:
    """Largest singular value; 0 for empty matrices."""
    s = singular_values(np.asarray(mat))
    return float(s[0]) if s.size else 0.0


def max_row_sum_norm(mat: np.ndarray) -> float:
    """Induced infinity norm (maximum absolute row sum)."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(mat), axis=1)))


def max_column_sum_norm(mat: np.ndarray) -> float:
    """Induced l1 norm (maximum absolute column sum)."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(mat), axis=0)))


def orthogonal_projector_complement(mat: np.ndarray, rank_tol: Optional[float] = None) -> np.ndarray:
    """I - X X^+ : projector onto the orthogonal complement of range(X)."""
    rows = mat.shape[0]
    if mat.size == 0:
        return np.eye(rows)
    proj = np.eye(rows) - mat @ pinv(mat, rank_tol)
    # symmetrize round-off
    return 0.5 * (proj + proj.T)
