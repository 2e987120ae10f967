"""
Custom exceptions for the sparse input localizer
"""

from typing import Any, Dict, List, Optional


class LocalizerError(Exception):
    """Base exception for all localizer errors"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class ModelValidationError(LocalizerError):
    """Base exception for malformed systems, batches and index sets"""
    pass


class DimensionMismatchError(ModelValidationError):
    """Exception raised when matrix or vector shapes disagree"""

    def __init__(self, name: str, expected: Any, actual: Any):
        super().__init__(
            f"Dimension mismatch for {name}: expected {expected}, got {actual}",
            {"name": name, "expected": str(expected), "actual": str(actual)}
        )


class InvalidActiveSetError(ModelValidationError):
    """Exception raised for empty or out-of-range source index sets"""

    def __init__(self, active_set: List[int], m: int, reason: str):
        super().__init__(
            f"Invalid active set {list(active_set)} for m={m}: {reason}",
            {"active_set": list(active_set), "m": m, "reason": reason}
        )


class DirectFeedthroughError(ModelValidationError):
    """Exception raised when a system carries a nonzero D matrix"""

    def __init__(self):
        super().__init__(
            "Direct feedthrough (D != 0) is not supported; H_0 must be zero",
            {"help": "Remove the 'D' key or set it to zeros"}
        )


class ModelFileError(LocalizerError):
    """Exception raised when a system or measurement file cannot be parsed"""

    def __init__(self, path: str, field: str, reason: str, line: Optional[int] = None):
        message = f"Cannot parse {path}: field '{field}' {reason}"
        if line is not None:
            message += f" (line {line})"
        super().__init__(message, {"path": path, "field": field, "reason": reason, "line": line})


class NumericalError(LocalizerError):
    """Base exception for numerical failures"""
    pass


class SvdFailureError(NumericalError):
    """Exception raised when the singular value decomposition does not converge"""

    def __init__(self, shape: Any, reason: str):
        super().__init__(
            f"SVD failed for matrix of shape {shape}: {reason}",
            {"shape": str(shape), "reason": reason}
        )


class SingularFrequencyError(NumericalError):
    """Exception raised when zI - A is singular at the requested frequency"""

    def __init__(self, z: complex, eigenvalue: complex):
        super().__init__(
            f"z={z:.6g} lies on an eigenvalue of A ({eigenvalue:.6g})",
            {"z": [z.real, z.imag], "eigenvalue": [eigenvalue.real, eigenvalue.imag]}
        )


class UnitCircleEigenvalueError(NumericalError):
    """Exception raised when A has eigenvalues on the unit circle"""

    def __init__(self, eigenvalues: List[complex]):
        super().__init__(
            f"A has {len(eigenvalues)} eigenvalue(s) on the unit circle; "
            "frequency-domain incoherence is undefined",
            {"eigenvalues": [[e.real, e.imag] for e in eigenvalues]}
        )


class PreconditionError(LocalizerError):
    """Exception raised when a structural or statistical precondition fails"""

    def __init__(self, operation: str, reason: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            f"Precondition for '{operation}' failed: {reason}",
            {"operation": operation, "reason": reason, **(details or {})}
        )


class CampaignCancelledError(LocalizerError):
    """Exception raised when a trial campaign is cancelled before completion"""

    def __init__(self, label: str):
        super().__init__(f"Campaign '{label}' was cancelled", {"label": label})


class OracleGuardError(LocalizerError):
    """Exception raised when an exhaustive search exceeds its size limits"""

    def __init__(self, m: int, k_max: int, max_m: int, max_k: int):
        super().__init__(
            f"Exhaustive subset search refused for m={m}, k_max={k_max} "
            f"(limits m<={max_m}, k_max<={max_k})",
            {"m": m, "k_max": k_max, "max_m": max_m, "max_k": max_k}
        )
