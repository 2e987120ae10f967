"""
Group-LASSO estimation of the initial state and sparse inputs

The joint problem

    min_{x0, u} (1/2T) ||y - O x0 - J u||^2 + lambda sum_j ||u_j||_2

is solved in two stages: u from the projected problem with Pi = I - O O^+
(ADMM with a cached Cholesky factor), then x0 = O^+ (y - J u).
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import settings
from exceptions import (
    DimensionMismatchError,
    ModelValidationError,
    OracleGuardError,
    PreconditionError,
)
from services.lti_core import BatchModel, LtiSystem, build_batch, validate_active_set
from services.solver_config import GroupLassoConfig
from services.structure import delayed_recovery, delayed_t_s, input_delay, ungroup_inputs
from utils.factor_cache import FactorCache
from utils.linalg import numerical_rank, orthogonal_projector_complement, pinv

logger = logging.getLogger(__name__)

BRUTE_FORCE_MAX_M = 12
BRUTE_FORCE_MAX_K = 5

# Iterations before objective increases are counted, and the last iteration
# at which the penalty may still be rebalanced
_BURN_IN = 10
_RHO_FREEZE = 1000
_RHO_PERIOD = 10

factor_cache: FactorCache = FactorCache(max_size=settings.solver.factor_cache_size, name="admm_factors")


@dataclass
class AdmmState:
    """ADMM iterates carried between solves along a lambda path."""
    u: np.ndarray
    z: np.ndarray
    w: np.ndarray
    rho: float

    def copy(self) -> "AdmmState":
        return AdmmState(u=self.u.copy(), z=self.z.copy(), w=self.w.copy(), rho=self.rho)


@dataclass
class EstimationResult:
    """Group-LASSO estimate with solver diagnostics."""
    x0_hat: np.ndarray
    u_hat: np.ndarray                     # (m, N+1)
    support: Tuple[int, ...]
    group_norms: np.ndarray
    iterations: int
    primal_res: float
    dual_res: float
    objective: float
    kkt_violation: float
    converged: bool
    lam: float
    rho: float
    method: str = "admm"                  # admm | zero | least_squares
    observable: bool = True
    monotonicity_violations: int = 0
    state: Optional[AdmmState] = None

    def u_stacked(self) -> np.ndarray:
        """Source-grouped stack (u_0; u_1; ...) matching BatchModel.j_full."""
        return self.u_hat.ravel()

    def to_dict(self) -> Dict:
        return {
            "x0_hat": self.x0_hat.tolist(),
            "u_hat": {str(j): row.tolist() for j, row in enumerate(self.u_hat)},
            "support": list(self.support),
            "group_norms": self.group_norms.tolist(),
            "iterations": self.iterations,
            "primal_res": self.primal_res,
            "dual_res": self.dual_res,
            "objective": self.objective,
            "kkt_violation": self.kkt_violation,
            "converged": self.converged,
            "lambda": self.lam,
            "rho": self.rho,
            "method": self.method,
            "least_squares": self.method == "least_squares",
            "observable": self.observable,
            "monotonicity_violations": self.monotonicity_violations,
        }


@dataclass
class BruteForceResult:
    """Exhaustive subset-selection outcome."""
    support: Tuple[int, ...]
    x0: np.ndarray
    u: np.ndarray                         # (m, N+1), zero outside the support
    residual: float
    evaluated: int


@dataclass
class EstimateReport:
    """Group LASSO, OLS refit on the estimated support, and the unidentifiable window."""
    result: EstimationResult
    horizon_n: int
    delay: Optional[int] = None
    refit_x0: Optional[np.ndarray] = None
    refit_u: Optional[np.ndarray] = None  # (|S_hat|, N-d+1)
    unidentifiable_steps: List[int] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        refit = None
        if self.refit_x0 is not None:
            refit = {
                "x0": self.refit_x0.tolist(),
                "u": {
                    str(j): row.tolist()
                    for j, row in zip(self.result.support, self.refit_u)
                } if self.refit_u is not None else {},
            }
        return {
            "estimate": self.result.to_dict(),
            "horizon": self.horizon_n,
            "delay": self.delay,
            "ols_refit": refit,
            "unidentifiable_steps": list(self.unidentifiable_steps),
            "notes": list(self.notes),
        }


def block_soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Proximal operator of t*||.||_2: 0 if ||v|| <= t, else (1 - t/||v||) v."""
    if t < 0:
        raise ModelValidationError("Threshold must be non-negative", {"t": t})
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= t:
        return np.zeros_like(v)
    return (1.0 - t / norm) * v


def annihilator(obs: np.ndarray) -> np.ndarray:
    """Pi = I - O O^+, the projector onto the orthogonal complement of range(O)."""
    if numerical_rank(obs) < obs.shape[1]:
        logger.warning(
            "Observability matrix is rank deficient; x0 will be the minimum-norm solution"
        )
    return orthogonal_projector_complement(obs)


def _check_y(batch: BatchModel, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.size != batch.t:
        raise DimensionMismatchError("y", batch.t, y.size)
    if not np.all(np.isfinite(y)):
        raise ModelValidationError("y contains non-finite entries")
    return y


def _operators(batch: BatchModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """(Pi, Pi J, J^T Pi J / T, observable) for a batch, cached by batch key."""
    key = (batch.key, "operators")
    cached = factor_cache.get(key)
    if cached is not None:
        return cached
    observable = numerical_rank(batch.obs) == batch.n
    proj = annihilator(batch.obs)
    j_proj = proj @ batch.j_full
    gram = j_proj.T @ j_proj / batch.t
    entry = (proj, j_proj, 0.5 * (gram + gram.T), observable)
    factor_cache.set(key, entry)
    return entry


def _factor(batch: BatchModel, gram: np.ndarray, rho: float):
    key = (batch.key, float(rho))
    cached = factor_cache.get(key)
    if cached is None:
        cached = scipy.linalg.cho_factor(gram + rho * np.eye(gram.shape[0]))
        factor_cache.set(key, cached)
    return cached


def _group_norms(batch: BatchModel, u: np.ndarray) -> np.ndarray:
    return np.linalg.norm(u.reshape(batch.m, batch.group_size), axis=1)


def _prox_groups(batch: BatchModel, v: np.ndarray, t: float) -> np.ndarray:
    out = np.empty_like(v)
    for j in range(batch.m):
        sl = batch.group_slice(j)
        out[sl] = block_soft_threshold(v[sl], t)
    return out


def objective_value(batch: BatchModel, y: np.ndarray, x0: np.ndarray, u: np.ndarray, lam: float) -> float:
    """(1/2T) ||y - O x0 - J u||^2 + lambda sum_j ||u_j||_2, u source-grouped."""
    resid = y - batch.obs @ x0 - batch.j_full @ u
    return float(resid @ resid / (2.0 * batch.t) + lam * np.sum(_group_norms(batch, u)))


def lambda_max(batch: BatchModel, y: np.ndarray) -> float:
    """max_j ||J_j^T Pi y||_2 / T; every lambda above it gives u_hat = 0."""
    y = _check_y(batch, y)
    proj, _, _, _ = _operators(batch)
    corr = batch.j_full.T @ (proj @ y) / batch.t
    return float(np.max(_group_norms(batch, corr)))


def kkt_residual(
    batch: BatchModel,
    y: np.ndarray,
    x0_hat: np.ndarray,
    u_hat: np.ndarray,
    lam: float,
) -> float:
    """
    Largest violation of the optimality conditions.

    ||O^T r / T|| for the unpenalized x0; ||J_j^T r / T - lambda u_j / ||u_j|||| for
    nonzero groups; max(0, ||J_j^T r / T|| - lambda) for zero groups.
    """
    y = _check_y(batch, y)
    u = np.asarray(u_hat, dtype=float).ravel()
    x0 = np.asarray(x0_hat, dtype=float).ravel()
    resid = y - batch.obs @ x0 - batch.j_full @ u
    worst = float(np.linalg.norm(batch.obs.T @ resid / batch.t))
    corr = batch.j_full.T @ resid / batch.t
    for j in range(batch.m):
        sl = batch.group_slice(j)
        norm = np.linalg.norm(u[sl])
        if norm > 0:
            worst = max(worst, float(np.linalg.norm(corr[sl] - lam * u[sl] / norm)))
        else:
            worst = max(worst, float(np.linalg.norm(corr[sl])) - lam)
    return max(worst, 0.0)


def kkt_tolerance(batch: BatchModel, y: np.ndarray, tol_abs: float) -> float:
    """10 tol_abs (1 + ||J^T y|| / T), the acceptance level for converged solves."""
    return 10.0 * tol_abs * (1.0 + float(np.linalg.norm(batch.j_full.T @ y)) / batch.t)


def _extract_support(norms: np.ndarray, rel_threshold: float) -> Tuple[int, ...]:
    top = float(np.max(norms)) if norms.size else 0.0
    if top <= 0:
        return ()
    return tuple(int(j) for j in np.flatnonzero(norms > rel_threshold * top))


def _finish(
    batch: BatchModel,
    y: np.ndarray,
    u: np.ndarray,
    cfg: GroupLassoConfig,
    observable: bool,
    **fields,
) -> EstimationResult:
    x0 = pinv(batch.obs) @ (y - batch.j_full @ u)
    norms = _group_norms(batch, u)
    return EstimationResult(
        x0_hat=x0,
        u_hat=u.reshape(batch.m, batch.group_size).copy(),
        support=_extract_support(norms, cfg.support_rel_threshold),
        group_norms=norms,
        objective=objective_value(batch, y, x0, u, cfg.lam),
        kkt_violation=kkt_residual(batch, y, x0, u, cfg.lam),
        lam=cfg.lam,
        observable=observable,
        **fields,
    )


def solve_group_lasso(
    batch: BatchModel,
    y: np.ndarray,
    cfg: GroupLassoConfig,
    warm_start: Optional[AdmmState] = None,
) -> EstimationResult:
    """
    Solve the group-LASSO problem for one lambda.

    lambda >= lambda_max returns the exact zero solution; lambda = 0 solves
    the projected least-squares problem directly. Otherwise ADMM runs on

        min_u (1/2T) ||Pi (y - J u)||^2 + lambda sum_j ||u_j||_2

    and u_hat is read from the thresholded z-iterate.

    Args:
        batch: Batch model (the active set, if any, is ignored)
        y: Stacked measurements of length T
        cfg: Solver configuration
        warm_start: Iterates of a previous solve on the same batch

    Returns:
        EstimationResult; converged=False when max_iter is exhausted
    """
    y = _check_y(batch, y)
    proj, j_proj, gram, observable = _operators(batch)
    y_proj = proj @ y
    size = batch.m * batch.group_size
    lam = cfg.lam

    if lam == 0:
        u = pinv(j_proj) @ y_proj
        logger.debug(f"lambda = 0: least-squares path on batch {batch.key}")
        return _finish(
            batch, y, u, cfg, observable,
            iterations=0, primal_res=0.0, dual_res=0.0, converged=True,
            rho=cfg.rho, method="least_squares",
        )

    corr = batch.j_full.T @ y_proj / batch.t
    if lam >= float(np.max(_group_norms(batch, corr))):
        return _finish(
            batch, y, np.zeros(size), cfg, observable,
            iterations=0, primal_res=0.0, dual_res=0.0, converged=True,
            rho=cfg.rho, method="zero",
        )

    if warm_start is not None:
        if warm_start.u.size != size:
            raise DimensionMismatchError("warm_start", size, warm_start.u.size)
        state = warm_start.copy()
    else:
        state = AdmmState(u=np.zeros(size), z=np.zeros(size), w=np.zeros(size), rho=cfg.rho)

    u, z, w, rho = state.u, state.z, state.w, state.rho
    factor = _factor(batch, gram, rho)
    kkt_tol = kkt_tolerance(batch, y, cfg.tol_abs)
    sqrt_size = math.sqrt(size)

    violations = 0
    prev_obj = math.inf
    r_norm = s_norm = math.inf
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        u = scipy.linalg.cho_solve(factor, corr + rho * (z - w))
        z_old = z
        z = _prox_groups(batch, u + w, lam / rho)
        w = w + u - z

        r_norm = float(np.linalg.norm(u - z))
        s_norm = float(rho * np.linalg.norm(z - z_old))
        eps_pri = sqrt_size * cfg.tol_abs + cfg.tol_rel * max(np.linalg.norm(u), np.linalg.norm(z))
        eps_dual = sqrt_size * cfg.tol_abs + cfg.tol_rel * rho * np.linalg.norm(w)

        resid = y_proj - j_proj @ z
        obj = float(resid @ resid / (2.0 * batch.t) + lam * np.sum(_group_norms(batch, z)))
        if iteration > _BURN_IN and obj > prev_obj + 1e-10 * max(1.0, abs(prev_obj)):
            violations += 1
        prev_obj = obj

        if r_norm <= eps_pri and s_norm <= eps_dual:
            x0 = pinv(batch.obs) @ (y - batch.j_full @ z)
            if kkt_residual(batch, y, x0, z, lam) <= kkt_tol:
                converged = True
                break

        if cfg.adaptive_rho and iteration <= _RHO_FREEZE and iteration % _RHO_PERIOD == 0:
            new_rho = rho
            if r_norm > cfg.rho_trigger * s_norm:
                new_rho = rho * cfg.rho_scale
            elif s_norm > cfg.rho_trigger * r_norm:
                new_rho = rho / cfg.rho_scale
            if new_rho != rho:
                # scaled dual follows the penalty
                w = w * (rho / new_rho)
                rho = new_rho
                factor = _factor(batch, gram, rho)

    if not converged:
        logger.warning(
            f"ADMM did not converge in {cfg.max_iter} iterations "
            f"(lambda={lam:.4g}, r={r_norm:.3g}, s={s_norm:.3g})"
        )
    if violations:
        logger.warning(f"ADMM objective increased {violations} time(s) after burn-in (lambda={lam:.4g})")

    result = _finish(
        batch, y, z, cfg, observable,
        iterations=iteration, primal_res=r_norm, dual_res=s_norm, converged=converged,
        rho=rho, method="admm", monotonicity_violations=violations,
    )
    result.state = AdmmState(u=u.copy(), z=z.copy(), w=w.copy(), rho=rho)
    logger.debug(
        f"ADMM lambda={lam:.4g}: {iteration} iterations, support={list(result.support)}, "
        f"kkt={result.kkt_violation:.3g}"
    )
    return result


def proximal_gradient_reference(
    batch: BatchModel,
    y: np.ndarray,
    lam: float,
    max_iter: int = 20000,
    tol: float = 1e-12,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    Accelerated proximal gradient on the joint (x0, u) problem.

    Independent of the two-stage decomposition; used to cross-check it.

    Returns:
        Tuple (x0, u source-grouped, objective)
    """
    y = _check_y(batch, y)
    design = np.hstack([batch.obs, batch.j_full])
    n = batch.n
    step = batch.t / max(float(np.linalg.norm(design, 2)) ** 2, 1e-300)

    theta = np.zeros(design.shape[1])
    momentum = theta.copy()
    t_k = 1.0
    for _ in range(max_iter):
        grad = design.T @ (design @ momentum - y) / batch.t
        candidate = momentum - step * grad
        nxt = candidate.copy()
        nxt[n:] = _prox_groups(batch, candidate[n:], step * lam)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        momentum = nxt + ((t_k - 1.0) / t_next) * (nxt - theta)
        done = np.linalg.norm(nxt - theta) <= tol * max(1.0, np.linalg.norm(theta))
        theta, t_k = nxt, t_next
        if done:
            break

    x0, u = theta[:n], theta[n:]
    return x0, u, objective_value(batch, y, x0, u, lam)


def brute_force_subset(
    batch: BatchModel,
    y: np.ndarray,
    k_max: int,
    fit_tol: Optional[float] = None,
) -> BruteForceResult:
    """
    Exhaustive block-column subset selection.

    Every support of size <= k_max is fitted by least squares on [O, J_R].
    Among supports whose residual is within fit_tol of the best, the one with
    the fewest groups wins (then the smaller residual).

    Raises:
        OracleGuardError: if m > 12 or k_max > 5
    """
    if batch.m > BRUTE_FORCE_MAX_M or k_max > BRUTE_FORCE_MAX_K or k_max < 0:
        raise OracleGuardError(batch.m, k_max, BRUTE_FORCE_MAX_M, BRUTE_FORCE_MAX_K)
    y = _check_y(batch, y)
    if fit_tol is None:
        fit_tol = 1e-10 * max(1.0, float(y @ y))

    fits = []
    for size in range(min(k_max, batch.m) + 1):
        for subset in itertools.combinations(range(batch.m), size):
            design = np.hstack([batch.obs] + [batch.impulse[j] for j in subset])
            coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
            resid = y - design @ coef
            fits.append((float(resid @ resid), subset, coef))

    best = min(f[0] for f in fits)
    residual, subset, coef = min(
        (f for f in fits if f[0] <= best + fit_tol),
        key=lambda f: (len(f[1]), f[0]),
    )
    u = np.zeros((batch.m, batch.group_size))
    for i, j in enumerate(subset):
        u[j] = coef[batch.n + i * batch.group_size:batch.n + (i + 1) * batch.group_size]
    return BruteForceResult(
        support=tuple(subset), x0=coef[:batch.n], u=u, residual=residual, evaluated=len(fits)
    )


def ols_refit(
    sys: LtiSystem,
    s_hat: Sequence[int],
    y: np.ndarray,
    n_horizon: int,
    d: int,
    check: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Unpenalized re-estimate on the recovered support.

    The first n + t_S entries of Psi_{S_hat}^+ y, i.e. delayed recovery on
    S_hat. An empty support gives the pure initial-state fit O^+ y.

    Args:
        check: Require the rank/range certificate at d (PreconditionError otherwise)

    Returns:
        Tuple (x0, u_delayed) with u_delayed time-interleaved of length t_S
    """
    y = np.asarray(y, dtype=float).ravel()
    s_hat = validate_active_set(s_hat, sys.m, allow_empty=True)
    batch = build_batch(sys, n_horizon)
    if y.size != batch.t:
        raise DimensionMismatchError("y", batch.t, y.size)
    if not s_hat:
        return pinv(batch.obs) @ y, np.zeros(0)

    batch = batch.with_active_set(s_hat)
    if check:
        return delayed_recovery(batch, y, d)
    est = pinv(batch.psi) @ y
    return est[:batch.n], est[batch.n:batch.n + delayed_t_s(batch, d)]


def estimate(
    batch: BatchModel,
    y: np.ndarray,
    cfg: GroupLassoConfig,
    warm_start: Optional[AdmmState] = None,
) -> EstimateReport:
    """
    Group LASSO followed by an OLS refit on S_hat.

    The refit uses d = eta_{S_hat}; the trailing d samples of every group lie
    in the unidentifiable window and are reported as such.
    """
    y = _check_y(batch, y)
    result = solve_group_lasso(batch, y, cfg, warm_start)
    report = EstimateReport(result=result, horizon_n=batch.horizon_n)
    if not result.observable:
        report.notes.append("O is rank deficient; x0_hat is the minimum-norm solution")
    if not result.support:
        report.refit_x0, _ = ols_refit(batch.system, (), y, batch.horizon_n, 0)
        report.refit_u = np.zeros((0, batch.group_size))
        return report

    eta = input_delay(batch.system, result.support)
    if not eta.is_finite or eta.value > batch.horizon_n:
        report.notes.append(f"eta for the estimated support is {eta.display}; OLS refit skipped")
        return report

    d = eta.value
    report.delay = d
    report.unidentifiable_steps = list(range(batch.horizon_n - d + 1, batch.horizon_n + 1))
    try:
        x0, u_delayed = ols_refit(batch.system, result.support, y, batch.horizon_n, d)
    except PreconditionError as e:
        report.notes.append(f"{e.message}; refit computed without the certificate")
        x0, u_delayed = ols_refit(batch.system, result.support, y, batch.horizon_n, d, check=False)
    report.refit_x0 = x0
    report.refit_u = ungroup_inputs(u_delayed, len(result.support))
    return report
