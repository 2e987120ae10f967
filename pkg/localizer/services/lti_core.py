"""
LTI systems and the stacked batch-measurement model

Builds everything downstream services consume: Markov parameters, the
observability matrix O, per-source impulse matrices J_j, the time-interleaved
group matrix J_S with its layout permutation, Psi_S = [O J_S], and simulated
measurement batches.
"""

import logging
import uuid
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from exceptions import (
    DimensionMismatchError,
    DirectFeedthroughError,
    InvalidActiveSetError,
    ModelValidationError,
)
from utils.linalg import ensure_finite, pinv

logger = logging.getLogger(__name__)

__all__ = [
    "LtiSystem",
    "BatchModel",
    "MeasurementBatch",
    "discretize",
    "markov_parameter",
    "markov_sequence",
    "markov_toeplitz",
    "build_observability",
    "build_impulse_matrix",
    "build_group_matrix",
    "build_batch",
    "noise_response_matrix",
    "validate_active_set",
    "simulate",
    "pinv",
]

_SYMMETRY_TOL = 1e-10


def _freeze(arr: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if arr is not None:
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """
    Discrete-time triple (A, B, C) with optional noise covariances.

    x[k+1] = A x[k] + B u[k] (+ w[k], w ~ N(0, Q))
    y[k]   = C x[k] + v[k],  v ~ N(0, R)

    Instances are immutable: the arrays are copied and marked read-only.
    """
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    q: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    dt: Optional[float] = None
    name: str = "system"
    spectral_radius: float = field(init=False)
    is_stable: bool = field(init=False)

    def __post_init__(self):
        a = np.array(ensure_finite("A", np.atleast_2d(self.a)), dtype=float)
        b = np.array(ensure_finite("B", np.atleast_2d(self.b)), dtype=float)
        c = np.array(ensure_finite("C", np.atleast_2d(self.c)), dtype=float)

        n = a.shape[0]
        if a.shape != (n, n) or n == 0:
            raise DimensionMismatchError("A", "square n x n with n >= 1", a.shape)
        if b.shape[0] != n or b.shape[1] == 0:
            raise DimensionMismatchError("B", f"({n}, m) with m >= 1", b.shape)
        if c.shape[1] != n or c.shape[0] == 0:
            raise DimensionMismatchError("C", f"(p, {n}) with p >= 1", c.shape)
        p = c.shape[0]

        q = None
        if self.q is not None:
            q = np.array(ensure_finite("Q", np.atleast_2d(self.q)), dtype=float)
            _check_covariance("Q", q, n, definite=False)
        r = None
        if self.r is not None:
            r = np.array(ensure_finite("R", np.atleast_2d(self.r)), dtype=float)
            _check_covariance("R", r, p, definite=True)
        if self.dt is not None and not self.dt > 0:
            raise ModelValidationError("dt must be positive", {"dt": self.dt})

        radius = float(np.max(np.abs(scipy.linalg.eigvals(a))))

        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "b", _freeze(b))
        object.__setattr__(self, "c", _freeze(c))
        object.__setattr__(self, "q", _freeze(q))
        object.__setattr__(self, "r", _freeze(r))
        object.__setattr__(self, "spectral_radius", radius)
        object.__setattr__(self, "is_stable", radius < 1.0)

        if not self.is_stable:
            logger.warning(
                f"[{self.name}] spectral radius {radius:.4g} >= 1; "
                "stability-based guarantees do not apply"
            )

    @classmethod
    def from_matrices(
        cls,
        a, b, c,
        d=None,
        q=None,
        r=None,
        dt: Optional[float] = None,
        name: str = "system",
    ) -> "LtiSystem":
        """Build a system, rejecting any nonzero direct feedthrough D."""
        if d is not None and np.any(np.asarray(d, dtype=float) != 0):
            raise DirectFeedthroughError()
        return cls(a=a, b=b, c=c, q=q, r=r, dt=dt, name=name)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def p(self) -> int:
        return self.c.shape[0]

    def measurement_covariance(self, sigma: float = 0.0) -> np.ndarray:
        """R if present, otherwise sigma^2 I."""
        if self.r is not None:
            return np.array(self.r)
        return (sigma ** 2) * np.eye(self.p)

    def with_sensors(self, rows: Sequence[int]) -> "LtiSystem":
        """Keep only the given rows of C (and the matching block of R)."""
        rows = list(rows)
        if not rows or any(i < 0 or i >= self.p for i in rows) or len(set(rows)) != len(rows):
            raise ModelValidationError(
                f"Invalid sensor rows {rows} for p={self.p}",
                {"rows": rows, "p": self.p}
            )
        r = None if self.r is None else self.r[np.ix_(rows, rows)]
        return LtiSystem(a=self.a, b=self.b, c=self.c[rows], q=self.q, r=r, dt=self.dt, name=self.name)

    def to_dict(self) -> Dict:
        """Convert to the JSON system-file layout."""
        data = {
            "A": self.a.tolist(),
            "B": self.b.tolist(),
            "C": self.c.tolist(),
            "name": self.name,
        }
        if self.q is not None:
            data["Q"] = self.q.tolist()
        if self.r is not None:
            data["R"] = self.r.tolist()
        if self.dt is not None:
            data["dt"] = self.dt
        return data


def _check_covariance(name: str, mat: np.ndarray, dim: int, definite: bool) -> None:
    if mat.shape != (dim, dim):
        raise DimensionMismatchError(name, (dim, dim), mat.shape)
    scale = max(1.0, float(np.max(np.abs(mat))))
    if np.max(np.abs(mat - mat.T)) > _SYMMETRY_TOL * scale:
        raise ModelValidationError(f"{name} must be symmetric", {"name": name})
    min_eig = float(np.min(np.linalg.eigvalsh(0.5 * (mat + mat.T))))
    if definite and min_eig <= 0:
        raise ModelValidationError(
            f"{name} must be positive definite (min eigenvalue {min_eig:.3g})",
            {"name": name, "min_eigenvalue": min_eig}
        )
    if not definite and min_eig < -_SYMMETRY_TOL * scale:
        raise ModelValidationError(
            f"{name} must be positive semidefinite (min eigenvalue {min_eig:.3g})",
            {"name": name, "min_eigenvalue": min_eig}
        )


def discretize(a_c: np.ndarray, b_c: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Zero-order-hold discretization.

    A = exp(A_c dt) and B = (int_0^dt exp(A_c tau) dtau) B_c, both read off the
    exponential of the augmented matrix [[A_c, B_c], [0, 0]] * dt.

    Args:
        a_c: Continuous-time state matrix (n x n)
        b_c: Continuous-time input matrix (n x m)
        dt: Sampling period

    Returns:
        Tuple (A, B)
    """
    a_c = ensure_finite("A_c", np.atleast_2d(a_c))
    b_c = ensure_finite("B_c", np.atleast_2d(b_c))
    if not dt > 0 or not np.isfinite(dt):
        raise ModelValidationError("dt must be a positive finite number", {"dt": dt})
    n = a_c.shape[0]
    if a_c.shape != (n, n):
        raise DimensionMismatchError("A_c", "square", a_c.shape)
    if b_c.shape[0] != n:
        raise DimensionMismatchError("B_c", f"({n}, m)", b_c.shape)
    m = b_c.shape[1]

    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = a_c
    aug[:n, n:] = b_c
    phi = scipy.linalg.expm(aug * dt)
    return phi[:n, :n], phi[:n, n:]


def validate_active_set(active_set: Iterable[int], m: int, allow_empty: bool = False) -> Tuple[int, ...]:
    """Check an ordered, duplicate-free set of source indices in [0, m)."""
    s = tuple(int(j) for j in active_set)
    if not s and not allow_empty:
        raise InvalidActiveSetError(list(s), m, "active set is empty")
    if len(set(s)) != len(s):
        raise InvalidActiveSetError(list(s), m, "duplicate indices")
    bad = [j for j in s if j < 0 or j >= m]
    if bad:
        raise InvalidActiveSetError(list(s), m, f"indices out of range: {bad}")
    return s


def _check_horizon(n_horizon: int) -> int:
    if int(n_horizon) != n_horizon or n_horizon < 0:
        raise ModelValidationError("Horizon N must be a non-negative integer", {"N": n_horizon})
    return int(n_horizon)


def _impulse_blocks(a: np.ndarray, c: np.ndarray, input_map: np.ndarray, last_lag: int) -> np.ndarray:
    """H_0 = 0 and H_l = C A^{l-1} input_map for l = 1..last_lag, shape (L+1, p, k)."""
    p, k = c.shape[0], input_map.shape[1]
    blocks = np.zeros((last_lag + 1, p, k))
    x = np.array(input_map, dtype=float)
    for lag in range(1, last_lag + 1):
        blocks[lag] = c @ x
        x = a @ x
    return blocks


def _block_toeplitz(blocks: np.ndarray) -> np.ndarray:
    """
    Lower block-Toeplitz matrix with block (k, l) = blocks[k - l].

    Columns are time-interleaved: column l*k_in + i is input channel i at time l.
    """
    steps, p, k_in = blocks.shape
    mat = np.zeros((p * steps, k_in * steps))
    for l in range(steps):
        mat[l * p:, l * k_in:(l + 1) * k_in] = blocks[:steps - l].reshape(p * (steps - l), k_in)
    return mat


def markov_sequence(sys: LtiSystem, cols: Sequence[int], last_lag: int) -> np.ndarray:
    """Stacked Markov parameters H_0..H_L for the columns `cols` of B, shape (L+1, p, |cols|)."""
    cols = validate_active_set(cols, sys.m)
    return _impulse_blocks(sys.a, sys.c, sys.b[:, list(cols)], _check_horizon(last_lag))


def markov_parameter(sys: LtiSystem, j: int, lag: int) -> np.ndarray:
    """
    Impulse response (Markov) parameter of source j.

    Returns the zero vector for lag 0, otherwise C A^{lag-1} b_j.
    """
    if lag < 0:
        raise ModelValidationError("Lag must be non-negative", {"lag": lag})
    return markov_sequence(sys, [j], lag)[lag][:, 0]


def markov_toeplitz(sys: LtiSystem, cols: Sequence[int], d: int) -> np.ndarray:
    """J_{S,[d:0]}: the time-interleaved block-Toeplitz matrix over lags 0..d."""
    return _block_toeplitz(markov_sequence(sys, cols, d))


def build_observability(sys: LtiSystem, n_horizon: int) -> np.ndarray:
    """Row blocks C, CA, ..., CA^N."""
    n_horizon = _check_horizon(n_horizon)
    blocks = []
    row = np.array(sys.c)
    for _ in range(n_horizon + 1):
        blocks.append(row)
        row = row @ sys.a
    return np.vstack(blocks)


def build_impulse_matrix(sys: LtiSystem, j: int, n_horizon: int) -> np.ndarray:
    """J_j: lower block-Toeplitz T x (N+1) matrix of source j's Markov parameters."""
    return _block_toeplitz(markov_sequence(sys, [j], _check_horizon(n_horizon)))


def noise_response_matrix(sys: LtiSystem, n_horizon: int) -> np.ndarray:
    """J_w: the impulse matrix with H_k replaced by C A^{k-1} (process noise enters every state)."""
    n_horizon = _check_horizon(n_horizon)
    return _block_toeplitz(_impulse_blocks(sys.a, sys.c, np.eye(sys.n), n_horizon))


def _layout_index(m_star: int, n_horizon: int) -> np.ndarray:
    """Column index into source-grouped [J_s1 ... J_sm*] for each time-interleaved column."""
    steps = n_horizon + 1
    interleaved = np.arange(m_star * steps)
    time, group = np.divmod(interleaved, m_star)
    return group * steps + time


def _layout_permutation(m_star: int, n_horizon: int) -> np.ndarray:
    index = _layout_index(m_star, n_horizon)
    size = index.size
    perm = np.zeros((size, size))
    perm[index, np.arange(size)] = 1.0
    return perm


def build_group_matrix(
    sys: LtiSystem,
    s: Sequence[int],
    n_horizon: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Time-interleaved J_S, Psi_S = [O J_S] and the layout permutation P.

    P satisfies [J_s1 ... J_sm*] @ P = J_S, so the source-grouped input stack
    equals P @ u_S.

    Returns:
        Tuple (j_group, psi, perm)
    """
    s = validate_active_set(s, sys.m)
    n_horizon = _check_horizon(n_horizon)
    grouped = np.hstack([build_impulse_matrix(sys, j, n_horizon) for j in s])
    j_group = grouped[:, _layout_index(len(s), n_horizon)]
    psi = np.hstack([build_observability(sys, n_horizon), j_group])
    return j_group, psi, _layout_permutation(len(s), n_horizon)


@dataclass(frozen=True, eq=False)
class BatchModel:
    """
    Horizon-N stacked model y = O x0 + sum_j J_j u_j + v.

    `impulse` holds J_0..J_{m-1}; `j_full` is their source-grouped
    concatenation. The active-set fields are None until an active set is
    attached with `with_active_set`.
    """
    system: LtiSystem
    horizon_n: int
    obs: np.ndarray
    impulse: Tuple[np.ndarray, ...]
    j_full: np.ndarray
    active_set: Optional[Tuple[int, ...]] = None
    j_group: Optional[np.ndarray] = None
    psi: Optional[np.ndarray] = None
    layout_perm: Optional[np.ndarray] = None
    key: str = field(default_factory=lambda: uuid.uuid4().hex)

    @property
    def t(self) -> int:
        return self.obs.shape[0]

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def m(self) -> int:
        return self.system.m

    @property
    def p(self) -> int:
        return self.system.p

    @property
    def group_size(self) -> int:
        return self.horizon_n + 1

    @property
    def m_star(self) -> int:
        return len(self.active_set) if self.active_set else 0

    @property
    def inactive_set(self) -> Tuple[int, ...]:
        active = set(self.active_set or ())
        return tuple(j for j in range(self.m) if j not in active)

    def group_slice(self, j: int) -> slice:
        """Columns of source j inside `j_full` (and entries of a stacked u)."""
        return slice(j * self.group_size, (j + 1) * self.group_size)

    def require_active_set(self) -> Tuple[int, ...]:
        if not self.active_set:
            raise ModelValidationError(
                "This operation needs a batch with an attached active set",
                {"batch": self.key}
            )
        return self.active_set

    def with_active_set(self, s: Sequence[int]) -> "BatchModel":
        """Attach an active set, reusing O and the J_j already built."""
        s = validate_active_set(s, self.m)
        grouped = np.hstack([self.impulse[j] for j in s])
        j_group = _freeze(grouped[:, _layout_index(len(s), self.horizon_n)])
        psi = _freeze(np.hstack([self.obs, j_group]))
        return BatchModel(
            system=self.system,
            horizon_n=self.horizon_n,
            obs=self.obs,
            impulse=self.impulse,
            j_full=self.j_full,
            active_set=s,
            j_group=j_group,
            psi=psi,
            layout_perm=_freeze(_layout_permutation(len(s), self.horizon_n)),
            key=self.key,
        )


def build_batch(sys: LtiSystem, n_horizon: int, active_set: Optional[Sequence[int]] = None) -> BatchModel:
    """
    Build O and every J_j over the horizon, optionally attaching an active set.

    Args:
        sys: The system
        n_horizon: N (measurements y[0..N])
        active_set: Optional ordered source indices S

    Returns:
        BatchModel
    """
    n_horizon = _check_horizon(n_horizon)
    obs = _freeze(build_observability(sys, n_horizon))
    blocks = _impulse_blocks(sys.a, sys.c, sys.b, n_horizon)
    impulse = tuple(_freeze(_block_toeplitz(blocks[:, :, [j]])) for j in range(sys.m))
    j_full = _freeze(np.hstack(impulse))
    batch = BatchModel(system=sys, horizon_n=n_horizon, obs=obs, impulse=impulse, j_full=j_full)
    logger.debug(f"Built batch {batch.key}: T={batch.t}, n={sys.n}, m={sys.m}, N={n_horizon}")
    if active_set is not None:
        return batch.with_active_set(active_set)
    return batch


@dataclass(frozen=True, eq=False)
class MeasurementBatch:
    """Stacked measurements y[0..N] with optional ground truth."""
    y: np.ndarray
    per_step_dim: int
    x0_true: Optional[np.ndarray] = None
    u_true: Optional[np.ndarray] = None
    support: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        if self.per_step_dim < 1 or y.size % self.per_step_dim != 0 or y.size == 0:
            raise DimensionMismatchError("y", f"a positive multiple of p={self.per_step_dim}", y.size)
        steps = y.size // self.per_step_dim
        if self.u_true is not None:
            u = np.atleast_2d(np.asarray(self.u_true, dtype=float))
            if u.shape[1] != steps:
                raise DimensionMismatchError("u_true", f"(m, {steps})", u.shape)
            object.__setattr__(self, "u_true", _freeze(u))
        if self.x0_true is not None:
            object.__setattr__(self, "x0_true", _freeze(np.asarray(self.x0_true, dtype=float).ravel()))
        object.__setattr__(self, "y", _freeze(y))

    @property
    def horizon_n(self) -> int:
        return self.y.size // self.per_step_dim - 1

    @property
    def t(self) -> int:
        return self.y.size

    def as_rows(self) -> np.ndarray:
        """Measurements as an (N+1) x p array, one row per time step."""
        return self.y.reshape(self.horizon_n + 1, self.per_step_dim)

    def to_dict(self) -> Dict:
        """Ground-truth sidecar layout."""
        return {
            "p": self.per_step_dim,
            "horizon": self.horizon_n,
            "x0": None if self.x0_true is None else self.x0_true.tolist(),
            "u": None if self.u_true is None else self.u_true.tolist(),
            "support": None if self.support is None else list(self.support),
        }


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric square root usable for PSD (not only PD) covariances."""
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate(
    sys: LtiSystem,
    x0: np.ndarray,
    u: np.ndarray,
    noise_seed: Optional[int] = None,
    sigma: float = 0.0,
    add_noise: bool = True,
) -> MeasurementBatch:
    """
    Run the recursion x[k+1] = A x[k] + B u[k] + w[k], y[k] = C x[k] + v[k].

    Measurement noise uses R when the system carries one, otherwise sigma^2 I;
    process noise is drawn only when Q is present. With add_noise=False (or all
    covariances zero) the output equals O x0 + sum_j J_j u_j.

    Args:
        sys: The system
        x0: Initial state (n,)
        u: Inputs, shape (m, N+1)
        noise_seed: Seed for numpy's default generator
        sigma: Measurement noise standard deviation when R is absent
        add_noise: Disable to obtain the noise-free response

    Returns:
        MeasurementBatch carrying the ground truth
    """
    x0 = ensure_finite("x0", np.asarray(x0, dtype=float).ravel())
    u = ensure_finite("u", np.atleast_2d(np.asarray(u, dtype=float)))
    if x0.size != sys.n:
        raise DimensionMismatchError("x0", sys.n, x0.size)
    if u.shape[0] != sys.m:
        raise DimensionMismatchError("u", f"({sys.m}, N+1)", u.shape)
    steps = u.shape[1]
    if steps == 0:
        raise DimensionMismatchError("u", "at least one time step", u.shape)

    rng = np.random.default_rng(noise_seed)
    v = np.zeros((steps, sys.p))
    w = np.zeros((steps, sys.n))
    if add_noise:
        r = sys.measurement_covariance(sigma)
        if np.any(r != 0):
            v = rng.standard_normal((steps, sys.p)) @ _covariance_factor(r).T
        if sys.q is not None and np.any(sys.q != 0):
            w = rng.standard_normal((steps, sys.n)) @ _covariance_factor(sys.q).T

    y = np.zeros((steps, sys.p))
    x = x0.copy()
    for k in range(steps):
        y[k] = sys.c @ x + v[k]
        x = sys.a @ x + sys.b @ u[:, k] + w[k]

    support = tuple(int(j) for j in np.flatnonzero(np.any(u != 0, axis=1)))
    return MeasurementBatch(y=y.ravel(), per_step_dim=sys.p, x0_true=x0, u_true=u, support=support)
