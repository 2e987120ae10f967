"""
Structural recoverability analysis

Input delay (eta_S), state-recovery delay (mu_S), normal rank and invariant
zeros of the Rosenbrock pencil, the rank/range certificate on the Psi_S
partition, and exact delayed recovery of (x0, u_S[0..N-d]).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import settings
from exceptions import ModelValidationError, PreconditionError
from services.lti_core import (
    BatchModel,
    LtiSystem,
    build_batch,
    build_observability,
    markov_sequence,
    _block_toeplitz,
    validate_active_set,
)
from utils.linalg import numerical_rank, pinv, singular_values

logger = logging.getLogger(__name__)


class DelayStatus(Enum):
    FINITE = "finite"
    INFINITE = "infinite"          # certified: the rank condition can never hold
    CAP_REACHED = "cap_reached"    # no d <= cap satisfies it; nothing claimed beyond


@dataclass(frozen=True)
class Delay:
    """A delay value that is either finite or explicitly not finite."""
    status: DelayStatus
    cap: int
    value: Optional[int] = None

    @property
    def is_finite(self) -> bool:
        return self.status == DelayStatus.FINITE

    @property
    def display(self) -> str:
        if self.status == DelayStatus.FINITE:
            return str(self.value)
        if self.status == DelayStatus.INFINITE:
            return "inf"
        return f">= {self.cap}"

    def to_dict(self) -> Dict:
        return {
            "value": self.value,
            "infinite": not self.is_finite,
            "certified": self.status != DelayStatus.CAP_REACHED,
            "status": self.status.value,
            "cap": self.cap,
            "display": self.display,
        }


@dataclass(frozen=True)
class ZeroCheck:
    """Outcome of the invariant-zero search on Z_S[z]."""
    has_zeros: bool
    zeros: Tuple[complex, ...]
    nrank: int
    degenerate: bool = False
    compressed: bool = False

    def to_dict(self) -> Dict:
        return {
            "has_zeros": self.has_zeros,
            "zeros": [[z.real, z.imag] for z in self.zeros],
            "nrank": self.nrank,
            "degenerate": self.degenerate,
            "probabilistic": self.compressed,
        }


@dataclass
class StructureReport:
    """Structural quantities for one (system, active set) pair."""
    active_set: Tuple[int, ...]
    eta_s: Delay
    mu_s: Delay
    d_max_used: int
    nrank_z: int
    zero_check: ZeroCheck
    horizon_n: Optional[int] = None
    prop1_delay: Optional[int] = None
    prop1_rank_ok: Optional[bool] = None
    prop1_range_ok: Optional[bool] = None
    t_s: Optional[int] = None
    notes: List[str] = field(default_factory=list)

    @property
    def has_invariant_zeros(self) -> bool:
        return self.zero_check.has_zeros

    def to_dict(self) -> Dict:
        return {
            "active_set": list(self.active_set),
            "eta_s": self.eta_s.to_dict(),
            "mu_s": self.mu_s.to_dict(),
            "d_max_used": self.d_max_used,
            "nrank_z": self.nrank_z,
            "has_invariant_zeros": self.has_invariant_zeros,
            "invariant_zeros": self.zero_check.to_dict(),
            "horizon": self.horizon_n,
            "prop1": {
                "d": self.prop1_delay,
                "rank_ok": self.prop1_rank_ok,
                "range_ok": self.prop1_range_ok,
                "t_s": self.t_s,
            },
            "notes": list(self.notes),
        }


def _resolve_cap(sys: LtiSystem, d_cap: Optional[int]) -> int:
    cap = d_cap if d_cap is not None else (settings.analysis.delay_cap or sys.n)
    if cap < 1:
        raise ModelValidationError("Delay cap must be at least 1", {"d_cap": cap})
    return int(cap)


def input_delay(sys: LtiSystem, s: Sequence[int], d_cap: Optional[int] = None) -> Delay:
    """
    eta_S: smallest d with Rank J_{S,[d:0]} - Rank J_{S,[d-1:0]} = m*.

    INFINITE is certified when H_1..H_n all vanish (Cayley-Hamilton then
    forces every Markov parameter to vanish); otherwise a miss is CAP_REACHED.
    """
    s = validate_active_set(s, sys.m)
    cap = _resolve_cap(sys, d_cap)
    m_star, p = len(s), sys.p

    blocks = markov_sequence(sys, s, max(cap, sys.n))
    if numerical_rank(blocks[1:sys.n + 1].reshape(-1, m_star)) == 0:
        return Delay(DelayStatus.INFINITE, cap)

    big = _block_toeplitz(blocks[:cap + 1])
    prev_rank = 0
    for d in range(cap + 1):
        rank = numerical_rank(big[:(d + 1) * p, :(d + 1) * m_star])
        if rank - prev_rank == m_star:
            return Delay(DelayStatus.FINITE, cap, d)
        prev_rank = rank

    logger.info(f"Input delay not found up to cap {cap} for S={list(s)}")
    return Delay(DelayStatus.CAP_REACHED, cap)


def state_delay(sys: LtiSystem, s: Sequence[int], d_cap: Optional[int] = None) -> Delay:
    """
    mu_S: smallest d >= 1 with Rank [O_d J_{S,[d:0]}] - Rank J_{S,[d:0]} = n.

    INFINITE is certified when (A, C) is unobservable, since the rank gap is
    bounded by Rank O_d.
    """
    s = validate_active_set(s, sys.m)
    cap = _resolve_cap(sys, d_cap)
    m_star, p, n = len(s), sys.p, sys.n

    if numerical_rank(build_observability(sys, n - 1)) < n:
        return Delay(DelayStatus.INFINITE, cap)

    big = _block_toeplitz(markov_sequence(sys, s, cap))
    obs = build_observability(sys, cap)
    for d in range(1, cap + 1):
        rows = (d + 1) * p
        j_d = big[:rows, :(d + 1) * m_star]
        gap = numerical_rank(np.hstack([obs[:rows], j_d])) - numerical_rank(j_d)
        if gap == n:
            return Delay(DelayStatus.FINITE, cap, d)

    logger.info(f"State delay not found up to cap {cap} for S={list(s)}")
    return Delay(DelayStatus.CAP_REACHED, cap)


def rosenbrock_matrix(sys: LtiSystem, s: Sequence[int], z: complex) -> np.ndarray:
    """Z_S[z] = [[zI - A, -B_S], [C, 0]]."""
    s = validate_active_set(s, sys.m)
    n, k = sys.n, len(s)
    top = np.hstack([z * np.eye(n) - sys.a, -sys.b[:, list(s)]])
    bottom = np.hstack([sys.c, np.zeros((sys.p, k))])
    return np.vstack([top, bottom]).astype(complex)


def _probe_points(sys: LtiSystem, probes: int, seed: int) -> List[complex]:
    rng = np.random.default_rng(seed)
    eigs = scipy.linalg.eigvals(sys.a)
    scale = max(1.0, sys.spectral_radius)
    points: List[complex] = []
    while len(points) < probes:
        z = scale * (0.5 + rng.random()) * np.exp(2j * np.pi * rng.random())
        if np.min(np.abs(eigs - z)) > 1e-3 * scale:
            points.append(complex(z))
    return points


def normal_rank_z(
    sys: LtiSystem,
    s: Sequence[int],
    probes: Optional[int] = None,
    seed: Optional[int] = None,
) -> int:
    """Maximum numerical rank of Z_S[z] over random complex probes away from spec(A)."""
    probes = probes if probes is not None else settings.analysis.nrank_probes
    if probes < 3:
        raise ModelValidationError("At least 3 probes are required", {"probes": probes})
    seed = settings.analysis.probe_seed if seed is None else seed
    return max(numerical_rank(rosenbrock_matrix(sys, s, z)) for z in _probe_points(sys, probes, seed))


def invariant_zero_check(
    sys: LtiSystem,
    s: Sequence[int],
    seed: Optional[int] = None,
    zero_tol: Optional[float] = None,
) -> ZeroCheck:
    """
    Find z0 with Rank Z_S[z0] < nRank Z_S.

    Square pencils (p = m*) use the finite generalized eigenvalues of
    (L, M) with Z_S[z] = zM - L. Non-square pencils are first compressed to
    square with a fixed-seed Gaussian row (p > m*) or column (p < m*) mixing;
    every candidate is then verified by a rank drop on the original pencil.
    A pencil whose normal rank is below min(n+p, n+m*) is reported as
    degenerate without a zero list.
    """
    s = validate_active_set(s, sys.m)
    seed = settings.analysis.probe_seed if seed is None else seed
    zero_tol = zero_tol if zero_tol is not None else settings.analysis.zero_tol
    n, k, p = sys.n, len(s), sys.p

    nrank = normal_rank_z(sys, s, seed=seed)
    if nrank < min(n + p, n + k):
        logger.warning(
            f"Rosenbrock pencil for S={list(s)} is identically rank deficient "
            f"(normal rank {nrank} < {min(n + p, n + k)})"
        )
        return ZeroCheck(has_zeros=False, zeros=(), nrank=nrank, degenerate=True, compressed=p != k)

    pencil_l = np.block([[sys.a, sys.b[:, list(s)]], [-sys.c, np.zeros((p, k))]])
    pencil_m = np.zeros((n + p, n + k))
    pencil_m[:n, :n] = np.eye(n)

    rng = np.random.default_rng(seed)
    if p > k:
        left = scipy.linalg.block_diag(np.eye(n), rng.standard_normal((k, p)))
        pencil_l, pencil_m = left @ pencil_l, left @ pencil_m
    elif p < k:
        right = scipy.linalg.block_diag(np.eye(n), rng.standard_normal((k, p)))
        pencil_l, pencil_m = pencil_l @ right, pencil_m @ right

    alpha, beta = scipy.linalg.eigvals(pencil_l, pencil_m, homogeneous_eigvals=True)
    finite = np.abs(beta) > 1e-10 * np.abs(alpha)
    candidates = alpha[finite] / beta[finite]

    zeros: List[complex] = []
    for z in candidates:
        sv = singular_values(rosenbrock_matrix(sys, s, complex(z)))
        if sv[nrank - 1] <= zero_tol * max(sv[0], 1.0):
            if not any(abs(z - known) <= 1e-6 * max(1.0, abs(z)) for known in zeros):
                zeros.append(complex(z))

    zeros.sort(key=lambda z: (round(z.real, 12), round(z.imag, 12)))
    if zeros:
        logger.info(f"Invariant zeros for S={list(s)}: {[f'{z:.4g}' for z in zeros]}")
    return ZeroCheck(has_zeros=bool(zeros), zeros=tuple(zeros), nrank=nrank, compressed=p != k)


def _check_split(batch: BatchModel, d: int) -> None:
    batch.require_active_set()
    if int(d) != d or d < 0 or d > batch.horizon_n:
        raise ModelValidationError(
            f"Delay d={d} outside [0, N={batch.horizon_n}]",
            {"d": d, "N": batch.horizon_n}
        )


def split_psi(batch: BatchModel, d: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Psi_{S,[N:d]} = [O, M_N .. M_d] and Psi_{S,[d-1:0]} = [M_{d-1} .. M_0].

    With time-interleaved J_S the block column M_l holds the inputs at time
    N - l, so the split is a plain column cut.
    """
    _check_split(batch, d)
    cut = batch.n + (batch.horizon_n - d + 1) * batch.m_star
    return batch.psi[:, :cut], batch.psi[:, cut:]


def verify_prop1(batch: BatchModel, d: int) -> Tuple[bool, bool]:
    """
    Full column rank of psi_high and trivial intersection of the two ranges.

    Returns:
        Tuple (rank_ok, range_ok)
    """
    psi_high, psi_low = split_psi(batch, d)
    rank_high = numerical_rank(psi_high)
    rank_ok = rank_high == psi_high.shape[1]
    if psi_low.shape[1] == 0:
        return rank_ok, True
    range_ok = numerical_rank(batch.psi) == rank_high + numerical_rank(psi_low)
    return rank_ok, range_ok


def delayed_t_s(batch: BatchModel, d: int) -> int:
    """t_S = (N - d + 1) m*."""
    return (batch.horizon_n - d + 1) * batch.m_star


def delayed_recovery(batch: BatchModel, y: np.ndarray, d: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    (x0, u_S[0..N-d]) as the first n + t_S entries of Psi_S^+ y.

    Raises:
        PreconditionError: if the rank/range certificate fails at d
    """
    rank_ok, range_ok = verify_prop1(batch, d)
    if not (rank_ok and range_ok):
        raise PreconditionError(
            "delayed_recovery",
            f"certificate failed at d={d} (rank_ok={rank_ok}, range_ok={range_ok})",
            {"d": d, "rank_ok": rank_ok, "range_ok": range_ok}
        )
    y = np.asarray(y, dtype=float).ravel()
    if y.size != batch.t:
        raise ModelValidationError(f"y has length {y.size}, expected T={batch.t}", {"T": batch.t})
    estimate = pinv(batch.psi) @ y
    t_s = delayed_t_s(batch, d)
    return estimate[:batch.n], estimate[batch.n:batch.n + t_s]


def ungroup_inputs(u_interleaved: np.ndarray, m_star: int) -> np.ndarray:
    """Time-interleaved (u_S[0]; u_S[1]; ...) to an (m*, steps) per-source array."""
    u_interleaved = np.asarray(u_interleaved, dtype=float).ravel()
    if m_star < 1 or u_interleaved.size % m_star:
        raise ModelValidationError(
            f"Cannot split {u_interleaved.size} samples into {m_star} sources",
            {"size": u_interleaved.size, "m_star": m_star}
        )
    return u_interleaved.reshape(-1, m_star).T


def analyze_structure(
    sys: LtiSystem,
    s: Sequence[int],
    n_horizon: Optional[int] = None,
    d_cap: Optional[int] = None,
) -> StructureReport:
    """
    Assemble eta_S, mu_S, normal rank, zeros and, when a horizon is given,
    the certificate at d = eta_S.
    """
    s = validate_active_set(s, sys.m)
    cap = _resolve_cap(sys, d_cap)
    eta = input_delay(sys, s, cap)
    mu = state_delay(sys, s, cap)
    zero_check = invariant_zero_check(sys, s)

    report = StructureReport(
        active_set=s,
        eta_s=eta,
        mu_s=mu,
        d_max_used=cap,
        nrank_z=zero_check.nrank,
        zero_check=zero_check,
        horizon_n=n_horizon,
    )

    if zero_check.degenerate:
        report.notes.append("Rosenbrock pencil is identically rank deficient")
    if mu.status == DelayStatus.CAP_REACHED:
        report.notes.append(f"mu_S not found for d <= {cap}; no claim beyond the cap")
    if eta.status == DelayStatus.CAP_REACHED:
        report.notes.append(f"eta_S not found for d <= {cap}; no claim beyond the cap")

    if n_horizon is not None and eta.is_finite:
        if eta.value > n_horizon:
            report.notes.append(f"Horizon N={n_horizon} is shorter than eta_S={eta.value}")
        else:
            batch = build_batch(sys, n_horizon, s)
            rank_ok, range_ok = verify_prop1(batch, eta.value)
            report.prop1_delay = eta.value
            report.prop1_rank_ok = rank_ok
            report.prop1_range_ok = range_ok
            report.t_s = delayed_t_s(batch, eta.value)

    logger.info(
        f"Structure for S={list(s)}: eta={eta.display}, mu={mu.display}, "
        f"nrank={zero_check.nrank}, zeros={zero_check.has_zeros}"
    )
    return report
