"""
Monte-Carlo evaluation harness

Random-system generation, forced-oscillation input synthesis, seeded trials,
lambda sweeps with FPR/FNR/ERR and relative-error metrics, and the horizon,
sensor-count and frequency-vs-time incoherence studies.

Every trial is a pure function of (spec, trial_index): its random streams are
spawned from SeedSequence([seed, trial_index]), so thread scheduling never
changes a result.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings
from exceptions import ModelValidationError
from services.group_lasso import (
    AdmmState,
    EstimationResult,
    lambda_max,
    ols_refit,
    solve_group_lasso,
)
from services.incoherence import group_norm_constant, lambda_t, mic_freq, mic_time
from services.lti_core import LtiSystem, MeasurementBatch, build_batch, simulate, validate_active_set
from services.solver_config import GroupLassoConfig
from services.structure import input_delay, ungroup_inputs
from services.trial_pool import PoolProgress, TrialPool
from utils.model_io import load_system

logger = logging.getLogger(__name__)

_AUTO_GRID = re.compile(r"^auto\((\d+)\)$")

TRIAL_CSV_HEADER = [
    "trial", "grid_index", "lambda", "fpr", "fnr", "err", "rel_err_u", "rel_err_x0",
    "x0_error_absolute", "iterations", "converged", "support", "true_support",
    "ols_err_window", "lasso_err_window", "alpha_implied", "stable", "skipped",
]


class SystemSource(str, Enum):
    RANDOM_GAUSSIAN = "random_gaussian"
    FROM_FILE = "from_file"


class SensorKind(str, Enum):
    GAUSSIAN = "gaussian"
    FIRST_STATES = "first_states"


class InputKind(str, Enum):
    UNIFORM_BOX = "uniform_box"
    SINUSOID = "sinusoid"


class X0Kind(str, Enum):
    ZERO = "zero"
    STANDARD_GAUSSIAN = "standard_gaussian"


class TrialSpec(BaseModel):
    """Monte-Carlo campaign definition (immutable)"""

    model_config = ConfigDict(frozen=True)

    # System
    system_source: SystemSource = SystemSource.RANDOM_GAUSSIAN
    system_path: Optional[Path] = None
    n: int = Field(10, ge=1)
    m: int = Field(5, ge=1)
    p: int = Field(5, ge=1)
    sensor_kind: SensorKind = SensorKind.GAUSSIAN
    sensor_rows: Optional[List[int]] = None
    max_spectral_radius: Optional[float] = Field(None, gt=0, description="Rescale A when its radius exceeds this")

    # Sources
    m_star: int = Field(1, ge=1)
    active_set: Optional[List[int]] = Field(None, description="Fixed S; drawn uniformly per trial when absent")
    input_kind: InputKind = InputKind.UNIFORM_BOX
    box_lo: float = -2.0
    box_hi: float = 2.0
    amplitude: float = Field(0.5, ge=0)
    amplitudes: Optional[List[float]] = Field(None, description="Per active source, overrides amplitude")
    f_max: float = Field(1.5, ge=0)
    jitter_sigma: float = Field(0.05, ge=0)
    dt: Optional[float] = Field(None, gt=0, description="Sampling period; system dt, then 1.0")

    # Measurements
    n_horizon: int = Field(20, ge=0)
    sigma: float = Field(0.01, ge=0)
    x0_kind: X0Kind = X0Kind.STANDARD_GAUSSIAN

    # Campaign
    seed: int = 0
    trials: int = Field(50, ge=1)
    lambda_grid: Union[List[float], str] = "auto(10)"
    delta: float = Field(default_factory=lambda: settings.analysis.delta, ge=0)

    @field_validator('lambda_grid')
    @classmethod
    def check_grid(cls, v):
        if isinstance(v, str):
            v = v.strip()
            if v != "theory" and not _AUTO_GRID.match(v):
                raise ValueError("lambda_grid must be a list, 'auto(k)' or 'theory'")
            if v.startswith("auto") and int(_AUTO_GRID.match(v).group(1)) < 1:
                raise ValueError("auto(k) needs k >= 1")
            return v
        if not v:
            raise ValueError("lambda_grid must not be empty")
        if any(lam < 0 for lam in v):
            raise ValueError("lambda values must be non-negative")
        return sorted(float(lam) for lam in v)

    @model_validator(mode='after')
    def check_dimensions(self) -> "TrialSpec":
        if self.system_source == SystemSource.FROM_FILE and self.system_path is None:
            raise ValueError("system_path is required for from_file systems")
        if self.system_source == SystemSource.RANDOM_GAUSSIAN:
            if self.m_star > self.m:
                raise ValueError(f"m_star={self.m_star} exceeds m={self.m}")
            if self.m > self.n:
                raise ValueError(f"B = [I_m; 0] needs m <= n (m={self.m}, n={self.n})")
            if self.sensor_kind == SensorKind.FIRST_STATES and self.p > self.n:
                raise ValueError(f"first_states sensors need p <= n (p={self.p}, n={self.n})")
        if self.active_set is not None and len(self.active_set) != self.m_star:
            raise ValueError(f"active_set has {len(self.active_set)} entries, m_star={self.m_star}")
        if self.amplitudes is not None and len(self.amplitudes) != self.m_star:
            raise ValueError(f"amplitudes has {len(self.amplitudes)} entries, m_star={self.m_star}")
        if self.box_lo > self.box_hi:
            raise ValueError("box_lo must not exceed box_hi")
        return self

    @property
    def grid_mode(self) -> str:
        if isinstance(self.lambda_grid, list):
            return "values"
        return "theory" if self.lambda_grid == "theory" else "auto"

    @property
    def auto_points(self) -> int:
        return int(_AUTO_GRID.match(self.lambda_grid).group(1)) if self.grid_mode == "auto" else 0

    def grid_size(self) -> int:
        if self.grid_mode == "values":
            return len(self.lambda_grid)
        return self.auto_points if self.grid_mode == "auto" else 1

    def grid_labels(self) -> List[str]:
        if self.grid_mode == "values":
            return [format(lam, ".6g") for lam in self.lambda_grid]
        if self.grid_mode == "auto":
            return [f"{frac:.6g}*lambda_max" for frac in auto_fractions(self.auto_points)]
        return ["theory"]

    def with_overrides(self, **overrides) -> "TrialSpec":
        """Validated copy with some fields replaced."""
        return TrialSpec(**{**self.model_dump(), **overrides})


@dataclass
class TrialRecord:
    """Outcome of one trial at one grid point."""
    trial: int
    grid_index: int
    lam: Optional[float]
    true_support: Tuple[int, ...]
    support: Tuple[int, ...] = ()
    fpr: float = math.nan
    fnr: float = math.nan
    err: float = math.nan
    rel_err_u: float = math.nan
    rel_err_x0: float = math.nan
    x0_error_absolute: bool = False
    iterations: int = 0
    converged: bool = False
    ols_err_window: Optional[float] = None
    lasso_err_window: Optional[float] = None
    alpha_implied: Optional[float] = None
    stable: bool = True
    skipped: bool = False

    @property
    def exact(self) -> bool:
        return not self.skipped and self.support == self.true_support

    @property
    def no_false_inclusion(self) -> bool:
        return not self.skipped and set(self.support) <= set(self.true_support)

    def to_row(self) -> Dict:
        return {
            "trial": self.trial,
            "grid_index": self.grid_index,
            "lambda": self.lam,
            "fpr": self.fpr,
            "fnr": self.fnr,
            "err": self.err,
            "rel_err_u": self.rel_err_u,
            "rel_err_x0": self.rel_err_x0,
            "x0_error_absolute": self.x0_error_absolute,
            "iterations": self.iterations,
            "converged": self.converged,
            "support": list(self.support),
            "true_support": list(self.true_support),
            "ols_err_window": self.ols_err_window,
            "lasso_err_window": self.lasso_err_window,
            "alpha_implied": self.alpha_implied,
            "stable": self.stable,
            "skipped": self.skipped,
        }


@dataclass
class SweepRow:
    """Trial-averaged metrics at one grid point."""
    grid_index: int
    label: str
    lambda_mean: float
    fpr: float
    fnr: float
    err: float
    rel_err_u: float
    rel_err_x0: float
    exact_recovery_count: int
    no_false_inclusion_rate: float
    trials: int
    skipped: int
    nonconverged: int
    ols_err_window_median: Optional[float] = None
    lasso_err_window_median: Optional[float] = None

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    """Per-lambda aggregates plus the per-trial records they are computed from."""
    rows: List[SweepRow]
    records: List[TrialRecord]
    spec: Dict = field(default_factory=dict)

    def trial_rows(self) -> List[Dict]:
        return [r.to_row() for r in self.records]

    @property
    def skipped_trials(self) -> int:
        """Trials left out because the implied alpha was >= 1 (theory grid only)."""
        return len({r.trial for r in self.records if r.skipped})

    def to_dict(self) -> Dict:
        return {
            "spec": self.spec,
            "rows": [row.to_dict() for row in self.rows],
            "trials": len({r.trial for r in self.records}),
            "skipped_trials": self.skipped_trials,
        }


def auto_fractions(k: int) -> List[float]:
    """k log-spaced fractions of lambda_max in [0.01, 1], ascending."""
    if k == 1:
        return [1.0]
    return [float(v) for v in np.logspace(-2.0, 0.0, k)]


def random_system(
    n: int,
    m: int,
    p: int,
    seed,
    sensor_kind: SensorKind = SensorKind.GAUSSIAN,
    max_spectral_radius: Optional[float] = None,
) -> LtiSystem:
    """
    Random test system: A_ij ~ N(0, 1/n), B = [I_m; 0], C Gaussian or a first-p-states selector.

    Args:
        seed: Anything numpy's default_rng accepts
        max_spectral_radius: When set, A is scaled down to this radius if it exceeds it
    """
    if m > n:
        raise ModelValidationError(f"B = [I_m; 0] needs m <= n (m={m}, n={n})")
    if sensor_kind == SensorKind.FIRST_STATES and p > n:
        raise ModelValidationError(f"first_states sensors need p <= n (p={p}, n={n})")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, 1.0 / math.sqrt(n), size=(n, n))
    if max_spectral_radius is not None:
        radius = float(np.max(np.abs(np.linalg.eigvals(a))))
        if radius > max_spectral_radius:
            a *= max_spectral_radius / radius
    b = np.vstack([np.eye(m), np.zeros((n - m, m))])
    if sensor_kind == SensorKind.FIRST_STATES:
        c = np.eye(n)[:p]
    else:
        c = rng.normal(0.0, 1.0, size=(p, n))
    return LtiSystem(a=a, b=b, c=c, name=f"random-n{n}-m{m}-p{p}")


def synth_inputs(spec: TrialSpec, s: Sequence[int], seed, m: Optional[int] = None, dt: Optional[float] = None) -> np.ndarray:
    """
    Input array (m, N+1): zero outside S, uniform-box or noisy sinusoid inside.

    The sinusoid is a_i sin(2 pi f dt k) + w[k] with f = f_max U(0, 1) drawn per
    source and w ~ N(0, jitter_sigma^2).
    """
    m = spec.m if m is None else m
    s = validate_active_set(s, m)
    if len(s) != spec.m_star:
        raise ModelValidationError(f"|S|={len(s)} differs from m_star={spec.m_star}")
    rng = np.random.default_rng(seed)
    steps = spec.n_horizon + 1
    u = np.zeros((m, steps))

    if spec.input_kind == InputKind.UNIFORM_BOX:
        u[list(s)] = rng.uniform(spec.box_lo, spec.box_hi, size=(len(s), steps))
        return u

    dt = dt or spec.dt or 1.0
    amplitudes = spec.amplitudes or [spec.amplitude] * len(s)
    k = np.arange(steps)
    for source, amp in zip(s, amplitudes):
        freq = spec.f_max * rng.uniform(0.0, 1.0)
        u[source] = amp * np.sin(2.0 * math.pi * freq * dt * k) + rng.normal(0.0, spec.jitter_sigma, size=steps)
    return u


def metrics(s_true: Sequence[int], s_hat: Sequence[int], m: int) -> Tuple[float, float, float]:
    """
    (FPR, FNR, ERR) over m source locations.

    FPR = |S^c & S_hat| / |S^c| (0 when S^c is empty), FNR = |S & S_hat^c| / |S|
    (0 when S is empty), ERR = (|S & S_hat| + |S^c & S_hat^c|) / m.
    """
    truth, est = set(s_true), set(s_hat)
    universe = set(range(m))
    if not truth <= universe or not est <= universe:
        raise ModelValidationError("Support indices outside [0, m)", {"m": m})
    inactive = universe - truth
    fpr = len(inactive & est) / len(inactive) if inactive else 0.0
    fnr = len(truth - est) / len(truth) if truth else 0.0
    err = (len(truth & est) + len(inactive - est)) / m
    return fpr, fnr, err


def _relative_error(estimate: np.ndarray, truth: np.ndarray) -> Tuple[float, bool]:
    """||estimate - truth|| / ||truth||, or the absolute norm (flagged) when truth is zero."""
    diff = float(np.linalg.norm(np.ravel(estimate) - np.ravel(truth)))
    scale = float(np.linalg.norm(truth))
    if scale == 0:
        return diff, True
    return diff / scale, False


def _trial_streams(spec: TrialSpec, trial_index: int) -> Dict[str, np.random.SeedSequence]:
    children = np.random.SeedSequence([spec.seed, trial_index]).spawn(5)
    return dict(zip(("system", "support", "inputs", "x0", "noise"), children))


def trial_system(spec: TrialSpec, trial_index: int, system: Optional[LtiSystem] = None) -> LtiSystem:
    """The system a trial runs on (random draw, or the loaded one) with sensor rows applied."""
    if spec.system_source == SystemSource.FROM_FILE:
        if system is None:
            system = load_system(spec.system_path)
    else:
        system = random_system(
            spec.n, spec.m, spec.p, _trial_streams(spec, trial_index)["system"],
            spec.sensor_kind, spec.max_spectral_radius,
        )
    if spec.sensor_rows is not None:
        system = system.with_sensors(spec.sensor_rows)
    return system


def _window_errors(
    sys: LtiSystem,
    result: EstimationResult,
    u_true: np.ndarray,
    y: np.ndarray,
    n_horizon: int,
    refits: Dict[Tuple[int, ...], Optional[Tuple[int, np.ndarray]]],
) -> Tuple[Optional[float], Optional[float]]:
    """OLS-refit and group-LASSO input errors on the identifiable window [0, N-d] of S_hat."""
    support = result.support
    if support not in refits:
        refit = None
        if not support:
            refit = (0, np.zeros((0, n_horizon + 1)))
        else:
            eta = input_delay(sys, support)
            if eta.is_finite and eta.value <= n_horizon:
                _, u_delayed = ols_refit(sys, support, y, n_horizon, eta.value, check=False)
                refit = (eta.value, ungroup_inputs(u_delayed, len(support)))
        refits[support] = refit

    refit = refits[support]
    if refit is None:
        return None, None
    d, u_refit = refit
    window = n_horizon - d + 1
    u_ols = np.zeros((sys.m, window))
    for i, j in enumerate(support):
        u_ols[j] = u_refit[i]
    truth = u_true[:, :window]
    ols_err, _ = _relative_error(u_ols, truth)
    lasso_err, _ = _relative_error(result.u_hat[:, :window], truth)
    return ols_err, lasso_err


def trial_support(spec: TrialSpec, trial_index: int, m: int) -> Tuple[int, ...]:
    """The fixed active set, or m_star sources drawn from the trial's support stream."""
    if spec.m_star > m:
        raise ModelValidationError(f"m_star={spec.m_star} exceeds m={m}")
    if spec.active_set is not None:
        return validate_active_set(spec.active_set, m)
    rng = np.random.default_rng(_trial_streams(spec, trial_index)["support"])
    return tuple(sorted(int(j) for j in rng.choice(m, size=spec.m_star, replace=False)))


def draw_scenario(
    spec: TrialSpec,
    trial_index: int,
    system: Optional[LtiSystem] = None,
) -> Tuple[LtiSystem, Tuple[int, ...], MeasurementBatch]:
    """
    System, true support and simulated measurements of one trial.

    Returns:
        Tuple (system, S, measurements with ground truth)
    """
    streams = _trial_streams(spec, trial_index)
    sys = trial_system(spec, trial_index, system)
    s = trial_support(spec, trial_index, sys.m)

    u_true = synth_inputs(spec, s, streams["inputs"], m=sys.m, dt=spec.dt or sys.dt)
    if spec.x0_kind == X0Kind.ZERO:
        x0_true = np.zeros(sys.n)
    else:
        x0_true = np.random.default_rng(streams["x0"]).standard_normal(sys.n)
    measured = simulate(sys, x0_true, u_true, noise_seed=streams["noise"], sigma=spec.sigma)
    return sys, s, MeasurementBatch(
        y=measured.y, per_step_dim=sys.p, x0_true=x0_true, u_true=u_true, support=s,
    )


def run_trial(spec: TrialSpec, trial_index: int, system: Optional[LtiSystem] = None) -> List[TrialRecord]:
    """
    One seeded trial evaluated at every grid point.

    The lambda path is solved from the largest value down with warm starts;
    records are returned in ascending grid order. Non-convergence is recorded,
    never dropped.
    """
    sys, s, measured = draw_scenario(spec, trial_index, system)
    y, u_true, x0_true = measured.y, measured.u_true, measured.x0_true

    batch = build_batch(sys, spec.n_horizon)
    alpha = None
    if spec.grid_mode == "values":
        grid = list(spec.lambda_grid)
    elif spec.grid_mode == "auto":
        top = lambda_max(batch, y)
        grid = [frac * top for frac in auto_fractions(spec.auto_points)]
    else:
        active = batch.with_active_set(s)
        alpha = len(s) * mic_time(active)[0] if active.inactive_set else 0.0
        if alpha >= 1.0:
            logger.debug(f"Trial {trial_index}: implied alpha {alpha:.3g} >= 1, skipped")
            return [TrialRecord(
                trial=trial_index, grid_index=0, lam=None, true_support=s,
                alpha_implied=alpha, stable=sys.is_stable, skipped=True,
            )]
        grid = [lambda_t(
            group_norm_constant(batch), spec.sigma, alpha, spec.n_horizon,
            sys.m, len(s), batch.t, spec.delta,
        )]

    base_cfg = GroupLassoConfig(lam=0.0)
    refits: Dict = {}
    state: Optional[AdmmState] = None
    records: List[TrialRecord] = []
    for index in sorted(range(len(grid)), key=lambda i: -grid[i]):
        lam = grid[index]
        result = solve_group_lasso(batch, y, base_cfg.with_lambda(lam), warm_start=state)
        if result.state is not None:
            state = result.state

        fpr, fnr, err = metrics(s, result.support, sys.m)
        rel_u, _ = _relative_error(result.u_hat, u_true)
        rel_x0, x0_absolute = _relative_error(result.x0_hat, x0_true)
        ols_err, lasso_err = _window_errors(sys, result, u_true, y, spec.n_horizon, refits)
        records.append(TrialRecord(
            trial=trial_index,
            grid_index=index,
            lam=lam,
            true_support=s,
            support=result.support,
            fpr=fpr,
            fnr=fnr,
            err=err,
            rel_err_u=rel_u,
            rel_err_x0=rel_x0,
            x0_error_absolute=x0_absolute,
            iterations=result.iterations,
            converged=result.converged,
            ols_err_window=ols_err,
            lasso_err_window=lasso_err,
            alpha_implied=alpha,
            stable=sys.is_stable,
        ))

    records.sort(key=lambda r: r.grid_index)
    return records


def _median(values: List[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


def aggregate(spec: TrialSpec, records: List[TrialRecord]) -> List[SweepRow]:
    """Mean of per-trial metrics at each grid point (skipped trials excluded)."""
    labels = spec.grid_labels()
    rows = []
    for index in range(spec.grid_size()):
        at_index = [r for r in records if r.grid_index == index]
        used = [r for r in at_index if not r.skipped]
        count = len(used)

        def mean(attr: str) -> float:
            return float(np.mean([getattr(r, attr) for r in used])) if used else math.nan

        rows.append(SweepRow(
            grid_index=index,
            label=labels[index],
            lambda_mean=mean("lam"),
            fpr=mean("fpr"),
            fnr=mean("fnr"),
            err=mean("err"),
            rel_err_u=mean("rel_err_u"),
            rel_err_x0=mean("rel_err_x0"),
            exact_recovery_count=sum(r.exact for r in used),
            no_false_inclusion_rate=(sum(r.no_false_inclusion for r in used) / count) if count else math.nan,
            trials=count,
            skipped=len(at_index) - count,
            nonconverged=sum(not r.converged for r in used),
            ols_err_window_median=_median([r.ols_err_window for r in used if r.ols_err_window is not None]),
            lasso_err_window_median=_median([r.lasso_err_window for r in used if r.lasso_err_window is not None]),
        ))
    rows.sort(key=lambda row: (math.isnan(row.lambda_mean), row.lambda_mean, row.grid_index))
    return rows


def _load_shared_system(spec: TrialSpec, system: Optional[LtiSystem]) -> Optional[LtiSystem]:
    if spec.system_source == SystemSource.FROM_FILE and system is None:
        return load_system(spec.system_path)
    return system


def run_sweep(
    spec: TrialSpec,
    pool: Optional[TrialPool] = None,
    progress_callback: Optional[Callable[[PoolProgress], None]] = None,
    system: Optional[LtiSystem] = None,
) -> MetricsReport:
    """
    Run every trial over the lambda grid and aggregate per grid point.

    Returns:
        MetricsReport with rows ordered by lambda
    """
    system = _load_shared_system(spec, system)
    pool = pool or TrialPool()
    per_trial = pool.map(
        lambda index: run_trial(spec, index, system),
        range(spec.trials),
        progress_callback=progress_callback,
        label="sweep",
    )
    records = [record for trial_records in per_trial for record in trial_records]
    report = MetricsReport(rows=aggregate(spec, records), records=records, spec=spec.model_dump(mode="json"))
    if report.skipped_trials == spec.trials:
        logger.warning(
            f"Every trial was skipped (implied alpha >= 1 in all {spec.trials}); "
            "the theory-grid statistics are vacuous for this campaign"
        )
    elif report.skipped_trials:
        logger.info(f"{report.skipped_trials} of {spec.trials} trial(s) skipped with implied alpha >= 1")
    logger.info(f"Sweep finished: {spec.trials} trials x {spec.grid_size()} grid point(s)")
    return report


@dataclass
class HorizonRow:
    horizon: int
    rel_err_u: float
    rel_err_x0: float
    err: float
    ols_err_window_median: Optional[float]
    lasso_err_window_median: Optional[float]
    trials: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def run_horizon_study(
    spec: TrialSpec,
    horizons: Sequence[int],
    pool: Optional[TrialPool] = None,
    system: Optional[LtiSystem] = None,
) -> List[HorizonRow]:
    """
    Estimation error versus horizon N, one sweep per N.

    With a multi-point grid the row with the best mean ERR is kept per N.
    """
    rows = []
    for horizon in horizons:
        report = run_sweep(spec.with_overrides(n_horizon=int(horizon)), pool, system=system)
        usable = [row for row in report.rows if row.trials]
        if not usable:
            continue
        best = max(usable, key=lambda row: (row.err, -row.grid_index))
        rows.append(HorizonRow(
            horizon=int(horizon),
            rel_err_u=best.rel_err_u,
            rel_err_x0=best.rel_err_x0,
            err=best.err,
            ols_err_window_median=best.ols_err_window_median,
            lasso_err_window_median=best.lasso_err_window_median,
            trials=best.trials,
        ))
    return rows


@dataclass
class SensorRow:
    p: int
    mic_l2_with_x0: float
    mic_l1_with_x0: float
    mic_l2_without_x0: float
    mic_l1_without_x0: float
    trials: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def run_sensor_study(
    spec: TrialSpec,
    sensor_counts: Sequence[int],
    pool: Optional[TrialPool] = None,
) -> List[SensorRow]:
    """
    Time-domain incoherence (l2 and l1) versus sensor count, with and without x0.

    Each trial draws one system with max(sensor_counts) sensors and keeps its
    first p rows, so counts are compared on the same dynamics.
    """
    if not sensor_counts:
        raise ModelValidationError("sensor_counts must not be empty")
    p_max = max(sensor_counts)
    base = spec.with_overrides(p=p_max, sensor_rows=None)
    pool = pool or TrialPool()

    def one_trial(index: int) -> List[Tuple[float, float, float, float]]:
        sys_full = trial_system(base, index)
        s = trial_support(base, index, sys_full.m)
        values = []
        for p in sensor_counts:
            batch = build_batch(sys_full.with_sensors(range(p)), base.n_horizon, s)
            with_x0 = mic_time(batch, include_initial_state=True)
            without_x0 = mic_time(batch, include_initial_state=False)
            values.append((*with_x0, *without_x0))
        return values

    per_trial = pool.map(one_trial, range(base.trials), label="sensor_study")
    rows = []
    for i, p in enumerate(sensor_counts):
        samples = np.array([trial[i] for trial in per_trial])
        means = samples.mean(axis=0)
        rows.append(SensorRow(
            p=int(p),
            mic_l2_with_x0=float(means[0]),
            mic_l1_with_x0=float(means[1]),
            mic_l2_without_x0=float(means[2]),
            mic_l1_without_x0=float(means[3]),
            trials=len(per_trial),
        ))
    return rows


@dataclass
class FdTdRow:
    horizon: int
    mean_gap: float
    min_gap: float
    trials: int
    skipped: int

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def run_fd_td_study(
    spec: TrialSpec,
    horizons: Sequence[int],
    pool: Optional[TrialPool] = None,
) -> List[FdTdRow]:
    """
    Gap between frequency- and time-domain incoherence (x0 = 0) versus N.

    The time-domain side uses the delayed left-inverse filter convention of
    `mic_time(deadbeat=True)` on the same frequency grid as `mic_freq`, so
    every gap is nonnegative and nonincreasing in N. Unstable draws are
    skipped; set max_spectral_radius to keep every draw.
    """
    pool = pool or TrialPool()

    def one_trial(index: int) -> Optional[List[float]]:
        sys = trial_system(spec, index)
        if not sys.is_stable:
            return None
        s = trial_support(spec, index, sys.m)
        fd = mic_freq(sys, s).value
        eta = input_delay(sys, s)
        d = eta.value if eta.is_finite else 0
        return [fd - mic_time(build_batch(sys, int(n), s), deadbeat=True, d=d)[0] for n in horizons]

    per_trial = pool.map(one_trial, range(spec.trials), label="fd_td_study")
    kept = [gaps for gaps in per_trial if gaps is not None]
    rows = []
    for i, horizon in enumerate(horizons):
        gaps = [trial[i] for trial in kept]
        rows.append(FdTdRow(
            horizon=int(horizon),
            mean_gap=float(np.mean(gaps)) if gaps else math.nan,
            min_gap=float(np.min(gaps)) if gaps else math.nan,
            trials=len(gaps),
            skipped=len(per_trial) - len(kept),
        ))
    return rows
