"""
Estimation command - group LASSO on measured data followed by an OLS refit
on the recovered support.
"""

import logging
import math
from typing import Any, Dict, Tuple

from config import settings
from dependencies import emit, get_active_set, get_measurements, get_system, resolve_output
from exceptions import PreconditionError
from services.group_lasso import estimate
from services.incoherence import group_norm_constant, lambda_t, mic_time, noise_covariance
from services.lti_core import BatchModel, build_batch
from services.solver_config import GroupLassoConfig
from utils.model_io import save_waveforms

logger = logging.getLogger(__name__)

EXIT_NOT_CONVERGED = 4


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser(
        "estimate",
        parents=parents,
        help="Localize active sources and estimate x0 and inputs from measurements",
    )
    parser.add_argument("--system", help="System JSON file")
    parser.add_argument("--measurements", help="Measurement CSV (k,y1..yp)")
    parser.add_argument("--horizon", type=int, help="Expected horizon N (checked against the row count)")
    parser.add_argument("--lambda", dest="lam", type=float, help="Regularization weight (default: theory rule)")
    parser.add_argument("--sigma", type=float, help="Noise level used by the theory rule (default: from R)")
    parser.add_argument("--delta", type=float, help="Confidence slack used by the theory rule")
    parser.add_argument("--active-set", help="Assumed active set for the incoherence term of the theory rule")
    parser.add_argument("--rho", type=float, help="Initial ADMM penalty")
    parser.add_argument("--max-iter", type=int, help="ADMM iteration limit")
    parser.add_argument("--tol", type=float, help="Absolute ADMM tolerance")
    parser.add_argument("--waveforms", help="Also write per-source input estimates to this CSV")
    parser.add_argument("--sensor-rows", help="Keep only these rows of C")
    parser.set_defaults(handler=run)


def _noise_level(args, batch: BatchModel) -> float:
    if args.sigma is not None:
        return float(args.sigma)
    if batch.system.r is None:
        raise PreconditionError(
            "estimate", "lambda was not given and no noise level is known; pass --sigma or add R to the system"
        )
    _, sigma_tilde_sq = noise_covariance(batch.system, batch.horizon_n)
    return math.sqrt(sigma_tilde_sq)


def theory_lambda(args, batch: BatchModel) -> Tuple[float, Dict[str, Any]]:
    """
    Regularization weight from the support-recovery rule.

    The incoherence term uses --active-set when given; without it the rule
    assumes alpha = 0 and a single active source.
    """
    sigma = _noise_level(args, batch)
    delta = settings.analysis.delta if args.delta is None else float(args.delta)
    s = get_active_set(args, batch.system, required=False)
    if s is None:
        logger.warning("No --active-set given; lambda rule assumes alpha = 0 and m* = 1")
        alpha, m_star = 0.0, 1
    else:
        active = batch.with_active_set(s)
        alpha = len(s) * mic_time(active)[0] if active.inactive_set else 0.0
        m_star = len(s)
    lam = lambda_t(
        group_norm_constant(batch), sigma, alpha, batch.horizon_n,
        batch.m, m_star, batch.t, delta,
    )
    logger.info(f"Theory lambda = {lam:.6g} (sigma={sigma:.4g}, alpha={alpha:.4g}, delta={delta})")
    return lam, {"rule": "theory", "sigma": sigma, "alpha": alpha, "m_star": m_star, "delta": delta}


def solver_config(args, lam: float) -> GroupLassoConfig:
    overrides: Dict[str, Any] = {"lam": lam}
    if args.rho is not None:
        overrides["rho"] = args.rho
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    if args.tol is not None:
        overrides["tol_abs"] = args.tol
    return GroupLassoConfig(**overrides)


def _waveform_series(report) -> Dict[str, Any]:
    result = report.result
    series: Dict[str, Any] = {}
    for j in result.support:
        series[f"lasso_u{j}"] = result.u_hat[j]
    if report.refit_u is not None:
        for j, row in zip(result.support, report.refit_u):
            series[f"ols_u{j}"] = row
    return series


def run(args) -> int:
    system = get_system(args)
    y, horizon = get_measurements(args, system)
    batch = build_batch(system, horizon)

    if args.lam is None:
        lam, lambda_info = theory_lambda(args, batch)
    else:
        lam, lambda_info = float(args.lam), {"rule": "given"}

    report = estimate(batch, y, solver_config(args, lam))
    for note in report.notes:
        logger.warning(note)
    logger.info(
        f"Estimated support {list(report.result.support)} "
        f"({report.result.method}, {report.result.iterations} iterations)"
    )

    series = _waveform_series(report)
    if args.waveforms:
        save_waveforms(args.waveforms, series)

    if args.format == "csv":
        save_waveforms(resolve_output(args.output), series)
    else:
        emit(args, {**report.to_dict(), "lambda_rule": lambda_info})

    if not report.result.converged:
        logger.error("Group LASSO did not converge; results are the last iterate")
        return EXIT_NOT_CONVERGED
    return 0
