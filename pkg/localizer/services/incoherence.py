"""
Incoherence and theorem constants

Group normalization C, least singular value c_min, time- and frequency-domain
mutual incoherence, lambda_T, beta_min, the process-noise covariance and the
two l2 error bounds. `incoherence_report` assembles them for one
(system, active set, horizon).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import settings
from exceptions import (
    ModelValidationError,
    PreconditionError,
    SingularFrequencyError,
    UnitCircleEigenvalueError,
)
from services.lti_core import (
    BatchModel,
    LtiSystem,
    build_batch,
    noise_response_matrix,
    validate_active_set,
)
from services.structure import input_delay, normal_rank_z, split_psi, delayed_t_s
from utils.linalg import (
    max_column_sum_norm,
    max_row_sum_norm,
    numerical_rank,
    orthogonal_projector_complement,
    pinv,
    spectral_norm,
)

logger = logging.getLogger(__name__)

LOG5 = math.log(5.0)


@dataclass
class MicFreqResult:
    """Frequency-domain incoherence over the upper half unit circle."""
    value: float
    aggregate: float
    omega_argmax: float
    source_argmax: int
    grid_points: int
    rank_deficient_omegas: List[float] = field(default_factory=list)
    trace: List[Tuple[float, int, float]] = field(default_factory=list)


@dataclass
class IncoherenceReport:
    """Recovery preconditions and bound constants for one configuration."""
    active_set: Tuple[int, ...]
    horizon_n: int
    c_norm: float
    mic_td_l2: float
    mic_td_l1: float
    alpha_implied: float
    include_initial_state: bool
    sigma: float
    delta: float
    delta1: float
    grid_points: int
    d: Optional[int] = None
    t_s: Optional[int] = None
    c_min: Optional[float] = None
    c_min_full_rank: Optional[bool] = None
    mic_fd: Optional[float] = None
    mic_fd_aggregate: Optional[float] = None
    mic_fd_omega: Optional[float] = None
    lambda_t: Optional[float] = None
    beta_min: Optional[float] = None
    sigma_tilde_sq: Optional[float] = None
    corollary_bound: Optional[float] = None
    oracle_bound: Optional[float] = None
    notes: List[str] = field(default_factory=list)

    @property
    def a3_satisfied(self) -> bool:
        return self.alpha_implied < 1.0

    def to_dict(self) -> Dict:
        return {
            "active_set": list(self.active_set),
            "horizon": self.horizon_n,
            "c_norm": self.c_norm,
            "c_min": self.c_min,
            "c_min_full_rank": self.c_min_full_rank,
            "mic_td_l2": self.mic_td_l2,
            "mic_td_l1": self.mic_td_l1,
            "alpha_implied": self.alpha_implied,
            "a3_satisfied": self.a3_satisfied,
            "include_initial_state": self.include_initial_state,
            "mic_fd": self.mic_fd,
            "mic_fd_aggregate": self.mic_fd_aggregate,
            "mic_fd_omega": self.mic_fd_omega,
            "lambda_t": self.lambda_t,
            "beta_min": self.beta_min,
            "sigma": self.sigma,
            "sigma_tilde_sq": self.sigma_tilde_sq,
            "grid_points": self.grid_points,
            "delta": self.delta,
            "delta1": self.delta1,
            "d": self.d,
            "t_s": self.t_s,
            "corollary_bound": self.corollary_bound,
            "oracle_bound": self.oracle_bound,
            "notes": list(self.notes),
        }


def group_norm_constant(batch: BatchModel) -> float:
    """C = max(||O||_2, ||J_1||_2, ..., ||J_m||_2) / sqrt(T)."""
    norms = [spectral_norm(batch.obs)] + [spectral_norm(j) for j in batch.impulse]
    return max(norms) / math.sqrt(batch.t)


def _projected_gram(batch: BatchModel, d: int) -> np.ndarray:
    psi_high, psi_low = split_psi(batch, d)
    proj = orthogonal_projector_complement(psi_low)
    gram = psi_high.T @ proj @ psi_high / batch.t
    return 0.5 * (gram + gram.T)


def least_singular(batch: BatchModel, d: int) -> float:
    """
    c_min = 1 / ||((psi_high^T M psi_high) / T)^+||_2 with M = I - psi_low psi_low^+.

    Returns 0.0 when the projected Gram matrix vanishes.
    """
    norm = spectral_norm(pinv(_projected_gram(batch, d)))
    return 1.0 / norm if norm > 0 else 0.0


def least_singular_full_rank(batch: BatchModel, d: int) -> bool:
    """Whether the projected Gram matrix behind c_min is nonsingular."""
    gram = _projected_gram(batch, d)
    return numerical_rank(gram) == gram.shape[1]


def mic_time(
    batch: BatchModel,
    include_initial_state: bool = True,
    deadbeat: bool = False,
    d: Optional[int] = None,
    grid_points: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Time-domain mutual incoherence max_{j in S^c} ||J_j^T Psi_S (Psi_S^T Psi_S)^+||.

    J_j^T Psi (Psi^T Psi)^+ equals (Psi^+ J_j)^T, so both norms are read off
    Psi^+ J_j. With include_initial_state=False, Psi_S is replaced by J_S.

    With deadbeat=True the coupling is instead the horizon-N section of the
    delayed left-inverse filter z^{-d} G_S^+[z] G_j[z] (x0 = 0), whose
    impulse response is read from the frequency grid of `mic_freq`. This is
    the time-domain counterpart that `mic_freq` bounds from above.

    Args:
        batch: Batch with an attached active set
        include_initial_state: Keep O in Psi_S (ignored with deadbeat)
        deadbeat: Use the delayed left-inverse filter convention
        d: Filter delay (default eta_S, or 0 when eta_S is not finite)
        grid_points: Frequency grid size of the deadbeat convention

    Returns:
        Tuple (l2, l1) of the induced 2-norm and 1-norm maxima
    """
    batch.require_active_set()
    inactive = batch.inactive_set
    if not inactive:
        raise PreconditionError("mic_time", "inactive set S^c is empty")
    if deadbeat:
        return _deadbeat_mic(batch, d, grid_points)

    design = batch.psi if include_initial_state else batch.j_group
    design_pinv = pinv(design)
    l2 = l1 = 0.0
    for j in inactive:
        coupling = (design_pinv @ batch.impulse[j]).T
        l2 = max(l2, spectral_norm(coupling))
        l1 = max(l1, max_column_sum_norm(coupling))
    return l2, l1


def _deadbeat_mic(batch: BatchModel, d: Optional[int], grid_points: Optional[int]) -> Tuple[float, float]:
    """
    Section of the block-circulant operator whose symbol is sampled on the
    `mic_freq` grid, so its norm never exceeds the grid maximum.
    """
    sys, s, inactive = batch.system, batch.active_set, batch.inactive_set
    grid_points = grid_points or settings.analysis.mic_grid_points
    if grid_points < 2:
        raise ModelValidationError("Frequency grid needs at least 2 points", {"grid_points": grid_points})
    period = 2 * (grid_points - 1)
    steps = batch.group_size
    if steps > period:
        raise ModelValidationError(
            f"Horizon N={batch.horizon_n} needs at least {-(-steps // 2) + 1} grid points",
            {"grid_points": grid_points, "horizon": batch.horizon_n}
        )
    on_circle = _unit_circle_eigenvalues(sys)
    if on_circle:
        raise UnitCircleEigenvalueError(on_circle)
    if d is None:
        eta = input_delay(sys, s)
        d = eta.value if eta.is_finite else 0

    half = np.linspace(0.0, math.pi, grid_points)
    upper = np.array([_coupling_at(sys, s, inactive, omega)[0] for omega in half])
    # real system: the lower half circle is the conjugate mirror
    symbol = np.concatenate([upper, np.conj(upper[-2:0:-1])], axis=0)
    symbol *= np.exp(-1j * d * 2.0 * math.pi * np.arange(period) / period)[:, None, None]
    taps = np.fft.ifft(symbol, axis=0).real

    lags = (np.arange(steps)[:, None] - np.arange(steps)[None, :]) % period
    l2 = l1 = 0.0
    for i in range(len(inactive)):
        # rows: (output step, active source); columns: input step of source j
        section = taps[lags, :, i].transpose(0, 2, 1).reshape(steps * len(s), steps)
        l2 = max(l2, spectral_norm(section))
        l1 = max(l1, max_column_sum_norm(section.T))
    return l2, l1


def _check_off_spectrum(sys: LtiSystem, z: complex) -> None:
    eigs = scipy.linalg.eigvals(sys.a)
    dist = np.abs(eigs - z)
    nearest = int(np.argmin(dist))
    if dist[nearest] <= settings.analysis.eig_tol * max(1.0, abs(z)):
        raise SingularFrequencyError(complex(z), complex(eigs[nearest]))


def transfer_matrix(sys: LtiSystem, cols: Sequence[int], z: complex) -> np.ndarray:
    """G[z] = C (zI - A)^{-1} B_cols through a linear solve."""
    cols = validate_active_set(cols, sys.m)
    _check_off_spectrum(sys, z)
    resolvent_b = scipy.linalg.solve(z * np.eye(sys.n) - sys.a, sys.b[:, list(cols)].astype(complex))
    return sys.c @ resolvent_b


def _unit_circle_eigenvalues(sys: LtiSystem) -> List[complex]:
    eigs = scipy.linalg.eigvals(sys.a)
    return [complex(e) for e in eigs if abs(abs(e) - 1.0) <= settings.analysis.eig_tol]


def _coupling_at(sys: LtiSystem, s: Sequence[int], inactive: Sequence[int], omega: float):
    """G_S^+ G_{S^c} at e^{i omega}, shape (m*, |S^c|), and whether G_S has full column rank."""
    g_all = transfer_matrix(sys, range(sys.m), np.exp(1j * omega))
    g_s = g_all[:, list(s)]
    return pinv(g_s) @ g_all[:, list(inactive)], numerical_rank(g_s) == len(s)


def _gains_at(sys: LtiSystem, s: Tuple[int, ...], inactive: Tuple[int, ...], omega: float):
    coupling, full_rank = _coupling_at(sys, s, inactive, omega)
    per_source = [float(np.linalg.norm(coupling[:, i])) for i in range(len(inactive))]
    return per_source, spectral_norm(coupling), full_rank


def mic_freq(
    sys: LtiSystem,
    s: Sequence[int],
    grid_points: Optional[int] = None,
    refine_factor: Optional[int] = None,
    trace: bool = False,
) -> MicFreqResult:
    """
    Frequency-domain mutual incoherence max_{j, omega} ||G_S^+[e^{iw}] G_j[e^{iw}]||_2.

    omega covers [0, pi] on a uniform grid (conjugate symmetry covers the
    rest), followed by one refinement pass around the arg-max. The aggregated
    variant uses G_{S^c} in place of the single column G_j.

    Args:
        sys: The system
        s: Active set
        grid_points: Uniform grid size (default from settings)
        refine_factor: Refinement density around the arg-max
        trace: Keep (omega, j, gain) rows for every evaluated point

    Raises:
        UnitCircleEigenvalueError: if A has an eigenvalue on the unit circle
    """
    s = validate_active_set(s, sys.m)
    inactive = tuple(j for j in range(sys.m) if j not in s)
    if not inactive:
        raise PreconditionError("mic_freq", "inactive set S^c is empty")
    grid_points = grid_points or settings.analysis.mic_grid_points
    refine_factor = refine_factor or settings.analysis.mic_refine_factor
    if grid_points < 2:
        raise ModelValidationError("Frequency grid needs at least 2 points", {"grid_points": grid_points})

    on_circle = _unit_circle_eigenvalues(sys)
    if on_circle:
        raise UnitCircleEigenvalueError(on_circle)

    nrank = normal_rank_z(sys, s)
    if nrank < sys.n + len(s):
        logger.warning(
            f"Normal rank of Z_S is {nrank} < n + m* = {sys.n + len(s)}; "
            "the frequency-domain incoherence condition does not apply"
        )

    result = MicFreqResult(
        value=0.0, aggregate=0.0, omega_argmax=0.0, source_argmax=inactive[0], grid_points=grid_points
    )

    def evaluate(omega: float) -> None:
        per_source, aggregate, full_rank = _gains_at(sys, s, inactive, omega)
        if not full_rank:
            result.rank_deficient_omegas.append(float(omega))
        for j, gain in zip(inactive, per_source):
            if trace:
                result.trace.append((float(omega), j, gain))
            if gain > result.value:
                result.value, result.omega_argmax, result.source_argmax = gain, float(omega), j
        result.aggregate = max(result.aggregate, aggregate)

    spacing = math.pi / (grid_points - 1)
    for omega in np.linspace(0.0, math.pi, grid_points):
        evaluate(omega)

    center = result.omega_argmax
    refined = np.linspace(max(0.0, center - spacing), min(math.pi, center + spacing), 2 * refine_factor + 1)
    for omega in refined:
        evaluate(omega)

    if result.rank_deficient_omegas:
        logger.warning(f"G_S is rank deficient at {len(result.rank_deficient_omegas)} grid point(s)")
    return result


def lambda_t(
    c_norm: float,
    sigma: float,
    alpha: float,
    n_horizon: int,
    m: int,
    m_star: int,
    t: int,
    delta: float,
) -> float:
    """
    Regularization weight from the support-recovery theorem.

    lambda_T = (sqrt(32) C sigma / (1 - alpha)) *
               (sqrt(((N+1) log 5 + log(m - m*)) / T) + delta / 2)

    log(m - m*) is taken as 0 when every source is active.
    """
    if not 0.0 <= alpha < 1.0:
        raise PreconditionError("lambda_t", f"alpha must lie in [0, 1), got {alpha:.6g}", {"alpha": alpha})
    if t <= 0:
        raise ModelValidationError("T must be positive", {"T": t})
    log_inactive = math.log(max(m - m_star, 1))
    root = math.sqrt(((n_horizon + 1) * LOG5 + log_inactive) / t)
    return math.sqrt(32.0) * c_norm * sigma / (1.0 - alpha) * (root + delta / 2.0)


def beta_min(
    batch: BatchModel,
    d: int,
    lambda_value: float,
    sigma: float,
    c_min: float,
    delta: float,
) -> float:
    """
    Minimum detectable delayed-input magnitude.

    (sigma / sqrt(c_min)) (sqrt(2 log t_S / T) + delta)
        + lambda ||Pi (Psi_S^T Psi_S / T)^+||_inf
    with Pi = [0_{t_S x n}  I_{t_S}  0_{t_S x d m*}].
    """
    if c_min <= 0:
        raise PreconditionError("beta_min", "c_min must be positive", {"c_min": c_min})
    split_psi(batch, d)
    t_s = delayed_t_s(batch, d)
    if t_s <= 0:
        raise PreconditionError("beta_min", "t_S = 0", {"d": d})

    gram_pinv = pinv(batch.psi.T @ batch.psi / batch.t)
    selected = gram_pinv[batch.n:batch.n + t_s]
    noise_term = sigma / math.sqrt(c_min) * (math.sqrt(2.0 * math.log(t_s) / batch.t) + delta)
    return noise_term + lambda_value * max_row_sum_norm(selected)


def noise_covariance(
    sys: LtiSystem,
    n_horizon: int,
    sigma: Optional[float] = None,
) -> Tuple[np.ndarray, float]:
    """
    Effective measurement covariance with process noise folded in.

    Sigma = J_w (I_{N+1} kron Q) J_w^T + I_{N+1} kron R. A missing Q counts
    as zero; a missing R falls back to sigma^2 I.

    Returns:
        Tuple (Sigma, sigma_tilde_sq) with sigma_tilde_sq = ||Sigma||_2
    """
    if sys.r is None and sigma is None:
        raise ModelValidationError("noise_covariance needs R on the system or an explicit sigma")
    steps = n_horizon + 1
    r = sys.measurement_covariance(sigma or 0.0)
    cov = np.kron(np.eye(steps), r)
    if sys.q is not None:
        j_w = noise_response_matrix(sys, n_horizon)
        cov = cov + j_w @ np.kron(np.eye(steps), sys.q) @ j_w.T
    cov = 0.5 * (cov + cov.T)
    return cov, float(np.max(np.linalg.eigvalsh(cov)))


def error_bounds(
    sigma: float,
    c_min: float,
    n: int,
    t_s: int,
    t: int,
    lambda_value: float,
    m_star: int,
    delta: float,
    delta1: float,
) -> Tuple[float, float]:
    """
    l2 error bounds for the group-LASSO estimate and the oracle OLS estimate.

    Returns:
        Tuple (corollary_bound, oracle_bound)
    """
    if c_min <= 0:
        raise PreconditionError("error_bounds", "c_min must be positive", {"c_min": c_min})
    if not 0.0 < delta1 < 1.0:
        raise ModelValidationError("delta1 must lie in (0, 1)", {"delta1": delta1})
    scale = sigma / math.sqrt(c_min)
    dim = n + t_s
    corollary = 2.0 * scale * (math.sqrt(2.0 * LOG5 * dim / t) + delta) \
        + lambda_value * math.sqrt(m_star / (t * c_min))
    oracle = 4.0 * scale * math.sqrt(dim / t) + 2.0 * scale * math.sqrt(math.log(1.0 / delta1) / t)
    return corollary, oracle


def incoherence_report(
    sys: LtiSystem,
    s: Sequence[int],
    n_horizon: int,
    sigma: Optional[float] = None,
    delta: Optional[float] = None,
    delta1: Optional[float] = None,
    d: Optional[int] = None,
    grid_points: Optional[int] = None,
    include_initial_state: bool = True,
    trace: bool = False,
) -> Tuple[IncoherenceReport, List[Tuple[float, int, float]]]:
    """
    Assemble every constant for (sys, S, N).

    sigma defaults to sqrt(sigma_tilde_sq) when the system carries R, and to
    0 otherwise. d defaults to eta_S. Quantities that are undefined for the
    configuration (alpha >= 1, infinite eta_S, unit-circle poles) are None
    and the reason is appended to `notes`.

    Returns:
        Tuple (report, trace rows (omega, j, gain))
    """
    s = validate_active_set(s, sys.m)
    delta = settings.analysis.delta if delta is None else delta
    delta1 = settings.analysis.delta1 if delta1 is None else delta1
    grid_points = grid_points or settings.analysis.mic_grid_points
    batch = build_batch(sys, n_horizon, s)
    notes: List[str] = []

    sigma_tilde_sq = None
    if sys.r is not None or sigma is not None:
        _, sigma_tilde_sq = noise_covariance(sys, n_horizon, sigma)
    if sigma is None:
        sigma = math.sqrt(sigma_tilde_sq) if sigma_tilde_sq is not None else 0.0
        if sigma_tilde_sq is None:
            notes.append("No noise level given and no R on the system; sigma = 0")

    c_norm = group_norm_constant(batch)
    if batch.inactive_set:
        l2, l1 = mic_time(batch, include_initial_state)
    else:
        l2 = l1 = 0.0
        notes.append("Every source is active; incoherence is vacuous")
    alpha = len(s) * l2

    report = IncoherenceReport(
        active_set=s,
        horizon_n=n_horizon,
        c_norm=c_norm,
        mic_td_l2=l2,
        mic_td_l1=l1,
        alpha_implied=alpha,
        include_initial_state=include_initial_state,
        sigma=sigma,
        delta=delta,
        delta1=delta1,
        grid_points=grid_points,
        sigma_tilde_sq=sigma_tilde_sq,
        notes=notes,
    )

    trace_rows: List[Tuple[float, int, float]] = []
    if batch.inactive_set:
        try:
            freq = mic_freq(sys, s, grid_points=grid_points, trace=trace)
            report.mic_fd = freq.value
            report.mic_fd_aggregate = freq.aggregate
            report.mic_fd_omega = freq.omega_argmax
            trace_rows = freq.trace
            if freq.rank_deficient_omegas:
                notes.append(f"G_S rank deficient at {len(freq.rank_deficient_omegas)} frequencies")
        except UnitCircleEigenvalueError as e:
            notes.append(e.message)
        if normal_rank_z(sys, s) < sys.n + len(s):
            notes.append("Normal rank of Z_S below n + m*; frequency-domain condition does not apply")

    if alpha < 1.0:
        report.lambda_t = lambda_t(c_norm, sigma, alpha, n_horizon, sys.m, len(s), batch.t, delta)
    else:
        notes.append(f"Implied alpha = {alpha:.4g} >= 1; lambda_T and beta_min undefined")

    if d is None:
        eta = input_delay(sys, s)
        if not eta.is_finite:
            notes.append(f"eta_S is {eta.display}; delayed quantities undefined")
            return report, trace_rows
        d = eta.value
    if d > n_horizon:
        notes.append(f"Delay d={d} exceeds horizon N={n_horizon}; delayed quantities undefined")
        return report, trace_rows

    report.d = d
    report.t_s = delayed_t_s(batch, d)
    report.c_min = least_singular(batch, d)
    report.c_min_full_rank = least_singular_full_rank(batch, d)

    if report.c_min > 0:
        lam = report.lambda_t if report.lambda_t is not None else 0.0
        corollary, report.oracle_bound = error_bounds(
            sigma, report.c_min, sys.n, report.t_s, batch.t, lam, len(s), delta, delta1
        )
        # the group-LASSO bound needs lambda_T
        if report.lambda_t is not None:
            report.beta_min = beta_min(batch, d, report.lambda_t, sigma, report.c_min, delta)
            report.corollary_bound = corollary
    else:
        notes.append("c_min = 0; bounds undefined")

    logger.info(
        f"Incoherence for S={list(s)}, N={n_horizon}: C={c_norm:.4g}, "
        f"mic_td={l2:.4g}, alpha={alpha:.4g}, mic_fd={report.mic_fd}"
    )
    return report, trace_rows
