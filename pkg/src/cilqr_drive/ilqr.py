"""Constrained iterative LQR for affine discrete-time systems.

Minimizes, over a finite horizon N,

    sum_{i=0}^{N-1} [ (x_i - x_r)' Q (x_i - x_r) + u_i' R u_i + barriers(x_i, u_i) ]
        + (x_N - x_r)' Q_f (x_N - x_r) + terminal barriers(x_N)

subject to x_{i+1} = A x_i + B u_i + C w.

Inequality constraints enter the cost through barrier terms shaped on a
linear functional of (x, u): a two-sided logarithmic barrier for hard
ranges and one-sided exponentials for soft bounds.  The log-barrier
sharpness is raised along an interior-point style schedule across outer
iterations, so converged solutions stay strictly inside their ranges.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Exponent guard for the one-sided barriers; keeps deep violations finite
# so the line search can still rank candidate trajectories.
_EXP_ARG_MAX = 45.0


class InfeasibleTrajectoryError(RuntimeError):
    """A log-barrier argument left the strict interior of its range."""


class BackwardPassError(RuntimeError):
    """O_uu was not positive definite at the requested regularization."""


class BarrierKind(enum.Enum):
    LOG_RANGE = "log_range"
    EXP_ONE_SIDED = "exp_one_sided"
    EXP_LANE_CENTERING = "exp_lane_centering"


@dataclass
class AffineDynamics:
    """Discrete-time affine map x' = A x + B u + C w.

    C and w are optional and must be supplied together; they model a
    known constant disturbance over the horizon.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None
    w: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be a square matrix")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B must have the same row count as A")
        if (self.C is None) != (self.w is None):
            raise ValueError("C and w must be supplied together")
        if self.C is not None:
            self.C = np.asarray(self.C, dtype=float)
            self.w = np.asarray(self.w, dtype=float).ravel()
            if self.C.shape != (self.A.shape[0], self.w.size):
                raise ValueError("C must be n x len(w)")
            self._drift = self.C @ self.w
        else:
            self._drift = np.zeros(self.A.shape[0])
        for name in ("A", "B", "_drift"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name.strip('_')} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u + self._drift


@dataclass
class QuadraticCost:
    """Quadratic penalty (x - x_ref)' Q (x - x_ref) + u' R u.

    Q must be symmetric PSD and R symmetric PD.  For a terminal cost R is
    simply unused.
    """

    Q: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray

    def __post_init__(self) -> None:
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        self.x_ref = np.asarray(self.x_ref, dtype=float).ravel()
        if self.Q.shape != (self.x_ref.size, self.x_ref.size):
            raise ValueError("Q must be n x n with n = len(x_ref)")
        if self.R.ndim != 2 or self.R.shape[0] != self.R.shape[1]:
            raise ValueError("R must be square")
        if not np.allclose(self.Q, self.Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if not np.allclose(self.R, self.R.T, atol=1e-10):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-9:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ValueError("R must be positive definite")


@dataclass
class BarrierTerm:
    """One barrier shaped on the scalar z = sel_x . x + sel_u . u + offset.

    LOG_RANGE:          -(1 / (t * t_scale)) * [ln(z - lower) + ln(upper - z)]
    EXP_ONE_SIDED:      q1 * exp(q2 * z)
    EXP_LANE_CENTERING: q1 * exp(q2 * sign * (z_i - z_{i-1})), the
                        predecessor value taken from the nominal
                        trajectory (frozen per backward pass).
    """

    kind: BarrierKind
    sel_x: np.ndarray
    sel_u: np.ndarray
    offset: float = 0.0
    lower: float = 0.0
    upper: float = 0.0
    t: float = 1.0
    q1: float = 1.0
    q2: float = 1.0
    sign: float = 1.0

    def __post_init__(self) -> None:
        self.sel_x = np.asarray(self.sel_x, dtype=float).ravel()
        self.sel_u = np.asarray(self.sel_u, dtype=float).ravel()
        if self.kind is BarrierKind.LOG_RANGE:
            if not self.lower < self.upper:
                raise ValueError("LOG_RANGE requires lower < upper")
            if self.t <= 0.0:
                raise ValueError("LOG_RANGE requires t > 0")
        else:
            if self.q1 <= 0.0:
                raise ValueError("exponential barriers require q1 > 0")
        if self.kind is BarrierKind.EXP_LANE_CENTERING:
            if self.sign not in (-1.0, 1.0):
                raise ValueError("sign must be +1 or -1")
            if np.any(self.sel_u != 0.0):
                raise ValueError("lane-centering barrier selects states only")

    # -- convenience constructors -------------------------------------

    @classmethod
    def log_range(cls, n: int, m: int, *, lower: float, upper: float,
                  t: float = 1.0, control_index: int | None = None,
                  state_index: int | None = None) -> "BarrierTerm":
        sel_x, sel_u = _basis_selectors(n, m, state_index, control_index)
        return cls(BarrierKind.LOG_RANGE, sel_x, sel_u,
                   lower=lower, upper=upper, t=t)

    @classmethod
    def exp_one_sided(cls, n: int, m: int, *, coeff: float = 1.0,
                      offset: float = 0.0, q1: float = 1.0, q2: float = 1.0,
                      control_index: int | None = None,
                      state_index: int | None = None) -> "BarrierTerm":
        sel_x, sel_u = _basis_selectors(n, m, state_index, control_index)
        return cls(BarrierKind.EXP_ONE_SIDED, coeff * sel_x, coeff * sel_u,
                   offset=offset, q1=q1, q2=q2)

    @classmethod
    def lane_centering(cls, n: int, m: int, *, state_index: int,
                       branch_positive: bool, weight: float = 1.0,
                       rate: float = 1.0) -> "BarrierTerm":
        sel_x, sel_u = _basis_selectors(n, m, state_index, None)
        return cls(BarrierKind.EXP_LANE_CENTERING, sel_x, sel_u,
                   q1=weight, q2=rate, sign=1.0 if branch_positive else -1.0)


def _basis_selectors(n: int, m: int, state_index: int | None,
                     control_index: int | None):
    if (state_index is None) == (control_index is None):
        raise ValueError("give exactly one of state_index / control_index")
    sel_x = np.zeros(n)
    sel_u = np.zeros(m)
    if state_index is not None:
        sel_x[state_index] = 1.0
    else:
        sel_u[control_index] = 1.0
    return sel_x, sel_u


@dataclass
class ProblemSpec:
    """A complete horizon problem: dynamics, costs, barriers, start state.

    `dynamics` is a single AffineDynamics applied at every step or a
    sequence of length `horizon`.  Running barriers apply at steps
    0..N-1; terminal barriers act on x_N only.
    """

    dynamics: AffineDynamics | Sequence[AffineDynamics]
    horizon: int
    cost: QuadraticCost
    terminal_cost: QuadraticCost
    x0: np.ndarray
    barriers: list[BarrierTerm] = field(default_factory=list)
    terminal_barriers: list[BarrierTerm] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        if not isinstance(self.dynamics, AffineDynamics):
            self.dynamics = list(self.dynamics)
            if len(self.dynamics) != self.horizon:
                raise ValueError("per-step dynamics must have length == horizon")
        dyn0 = self.dynamics_at(0)
        n, m = dyn0.n, dyn0.m
        if self.x0.size != n:
            raise ValueError("x0 size must match the state dimension")
        if self.cost.x_ref.size != n or self.terminal_cost.x_ref.size != n:
            raise ValueError("cost dimension must match the state dimension")
        if self.cost.R.shape[0] != m:
            raise ValueError("R dimension must match the control dimension")
        for term in list(self.barriers) + list(self.terminal_barriers):
            if term.sel_x.size != n or term.sel_u.size != m:
                raise ValueError("barrier selector dimensions must match the problem")
        for term in self.terminal_barriers:
            if np.any(term.sel_u != 0.0):
                raise ValueError("terminal barriers may not select controls")

    def dynamics_at(self, i: int) -> AffineDynamics:
        if isinstance(self.dynamics, AffineDynamics):
            return self.dynamics
        return self.dynamics[i]

    @property
    def n(self) -> int:
        return self.dynamics_at(0).n

    @property
    def m(self) -> int:
        return self.dynamics_at(0).m


@dataclass
class Trajectory:
    """States (N+1, n) and controls (N, m); consistent after rollout."""

    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float)
        self.controls = np.asarray(self.controls, dtype=float)
        if self.states.ndim != 2 or self.controls.ndim != 2:
            raise ValueError("states and controls must be 2-d arrays")
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise ValueError("states must hold exactly one more row than controls")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


@dataclass
class GainSchedule:
    """Feedforward k (N, m) and feedback K (N, m, n) from a backward pass.

    grad_norm carries the largest control-gradient entry seen during the
    pass.  Near active barriers the expected decrease alone is a poor
    stationarity measure (the barrier Hessian crushes the Newton step),
    so convergence tests pair it with this gradient norm.
    """

    k: np.ndarray
    K: np.ndarray
    grad_norm: float = 0.0


@dataclass
class SolverConfig:
    max_outer_iterations: int = 40
    max_line_search_steps: int = 14
    cost_tolerance: float = 1e-4      # relative |dJ| convergence threshold
    gradient_tolerance: float = 1e-5  # relative control-gradient threshold
    lambda_shrink: float = 0.5
    lambda_min: float = 1e-4
    regularization_init: float = 1e-6
    regularization_growth: float = 10.0
    regularization_max: float = 1e2
    barrier_t_init: float = 1.0
    barrier_t_growth: float = 5.0
    barrier_t_max: float = 1e4

    def __post_init__(self) -> None:
        if self.max_outer_iterations < 1 or self.max_line_search_steps < 1:
            raise ValueError("iteration limits must be >= 1")
        if not 0.0 < self.lambda_shrink < 1.0:
            raise ValueError("lambda_shrink must lie in (0, 1)")
        if self.lambda_min <= 0.0 or self.cost_tolerance <= 0.0:
            raise ValueError("lambda_min and cost_tolerance must be positive")
        if self.gradient_tolerance <= 0.0:
            raise ValueError("gradient_tolerance must be positive")
        if self.regularization_init <= 0.0 or self.regularization_growth <= 1.0:
            raise ValueError("regularization schedule must grow from a positive start")
        if self.barrier_t_init <= 0.0 or self.barrier_t_growth <= 1.0:
            raise ValueError("barrier schedule must grow from a positive start")
        if self.barrier_t_max < self.barrier_t_init:
            raise ValueError("barrier_t_max must be >= barrier_t_init")


@dataclass
class SolveInfo:
    converged: bool
    iterations: int
    cost: float
    cost_history: list[float]
    expected_decrease: float
    barrier_t_scale: float
    regularization: float
    log_range_margins: list[tuple[float, float]]
    message: str = ""


@dataclass
class SolveResult:
    trajectory: Trajectory
    gains: GainSchedule | None
    info: SolveInfo


@dataclass
class BarrierDerivatives:
    value: float
    grad_x: np.ndarray
    grad_u: np.ndarray
    hess_xx: np.ndarray
    hess_uu: np.ndarray
    hess_ux: np.ndarray


# ---------------------------------------------------------------------------
# Scalar barrier profiles: value, first and second derivative w.r.t. z.
# ---------------------------------------------------------------------------

def _log_range_profile(term: BarrierTerm, z, t_scale: float):
    a = z - term.lower
    b = term.upper - z
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        raise InfeasibleTrajectoryError(
            f"log-range argument outside ({term.lower}, {term.upper})")
    inv_t = 1.0 / (term.t * t_scale)
    value = -inv_t * (np.log(a) + np.log(b))
    g1 = -inv_t * (1.0 / a - 1.0 / b)
    g2 = inv_t * (1.0 / a ** 2 + 1.0 / b ** 2)
    return value, g1, g2


def _exp_profile(term: BarrierTerm, z):
    e = term.q1 * np.exp(np.minimum(term.q2 * z, _EXP_ARG_MAX))
    return e, term.q2 * e, term.q2 * term.q2 * e


def barrier_value_and_derivatives(term: BarrierTerm, x: np.ndarray,
                                  u: np.ndarray, prev_x: np.ndarray | None = None,
                                  t_scale: float = 1.0) -> BarrierDerivatives:
    """Evaluate one barrier term and its chain-ruled derivatives at (x, u).

    For the lane-centering kind the predecessor state must be supplied;
    its contribution is held fixed, so the returned derivatives are those
    of this single term with the predecessor frozen.
    """
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    z = float(term.sel_x @ x + term.sel_u @ u + term.offset)
    chain = 1.0
    if term.kind is BarrierKind.EXP_LANE_CENTERING:
        if prev_x is None:
            raise ValueError("lane-centering barrier needs prev_x")
        z_prev = float(term.sel_x @ np.asarray(prev_x, dtype=float).ravel()
                       + term.offset)
        z = term.sign * (z - z_prev)
        chain = term.sign
    if term.kind is BarrierKind.LOG_RANGE:
        value, g1, g2 = _log_range_profile(term, z, t_scale)
    else:
        value, g1, g2 = _exp_profile(term, z)
    gx = (g1 * chain) * term.sel_x
    gu = (g1 * chain) * term.sel_u
    hxx = g2 * np.outer(term.sel_x, term.sel_x)
    huu = g2 * np.outer(term.sel_u, term.sel_u)
    hux = g2 * np.outer(term.sel_u, term.sel_x)
    return BarrierDerivatives(float(value), gx, gu, hxx, huu, hux)


# ---------------------------------------------------------------------------
# Trajectory operations.
# ---------------------------------------------------------------------------

def rollout(dynamics: AffineDynamics | Sequence[AffineDynamics],
            x0: np.ndarray, controls: np.ndarray) -> Trajectory:
    """Propagate x0 through the dynamics under the given control sequence."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 2:
        raise ValueError("controls must be an (N, m) array")
    N = controls.shape[0]
    dyn0 = dynamics if isinstance(dynamics, AffineDynamics) else dynamics[0]
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != dyn0.n:
        raise ValueError("x0 size must match the state dimension")
    if controls.shape[1] != dyn0.m:
        raise ValueError("controls width must match the control dimension")
    states = np.empty((N + 1, dyn0.n))
    states[0] = x0
    x = x0
    for i in range(N):
        dyn = dynamics if isinstance(dynamics, AffineDynamics) else dynamics[i]
        x = dyn.step(x, controls[i])
        states[i + 1] = x
    return Trajectory(states, controls)


def _running_barrier_z(term: BarrierTerm, states: np.ndarray,
                       controls: np.ndarray):
    """Barrier arguments for steps 0..N-1 (lane centering pre-differenced)."""
    N = controls.shape[0]
    z = states[:N] @ term.sel_x + controls @ term.sel_u + term.offset
    if term.kind is BarrierKind.EXP_LANE_CENTERING:
        prev = np.concatenate(([z[0]], z[:-1]))   # step 0 references itself
        z = term.sign * (z - prev)
    return z


def _terminal_barrier_z(term: BarrierTerm, states: np.ndarray) -> float:
    z = float(term.sel_x @ states[-1] + term.offset)
    if term.kind is BarrierKind.EXP_LANE_CENTERING:
        z_prev = float(term.sel_x @ states[-2] + term.offset)
        z = term.sign * (z - z_prev)
    return z


def total_cost(traj: Trajectory, spec: ProblemSpec, t_scale: float = 1.0) -> float:
    """Barrier-augmented cost of a trajectory.

    Raises InfeasibleTrajectoryError if any log-range argument is outside
    its open interval; the caller must restore feasibility.
    """
    if (traj.horizon != spec.horizon or traj.states.shape[1] != spec.n
            or traj.controls.shape[1] != spec.m):
        raise ValueError("trajectory shape does not match the problem")
    return _cost_arrays(traj.states, traj.controls, spec, t_scale)


def _cost_arrays(X: np.ndarray, U: np.ndarray, spec: ProblemSpec,
                 t_scale: float) -> float:
    N = spec.horizon
    ex = X[:N] - spec.cost.x_ref
    J = float(np.einsum("ni,ij,nj->", ex, spec.cost.Q, ex)
              + np.einsum("ni,ij,nj->", U, spec.cost.R, U))
    eN = X[N] - spec.terminal_cost.x_ref
    J += float(eN @ spec.terminal_cost.Q @ eN)
    for term in spec.barriers:
        z = _running_barrier_z(term, X, U)
        if term.kind is BarrierKind.LOG_RANGE:
            value, _, _ = _log_range_profile(term, z, t_scale)
        else:
            value, _, _ = _exp_profile(term, z)
        J += float(np.sum(value))
    for term in spec.terminal_barriers:
        z = _terminal_barrier_z(term, X)
        if term.kind is BarrierKind.LOG_RANGE:
            value, _, _ = _log_range_profile(term, z, t_scale)
        else:
            value, _, _ = _exp_profile(term, z)
        J += float(value)
    return J


def backward_pass(traj: Trajectory, spec: ProblemSpec, regularization: float,
                  t_scale: float = 1.0) -> tuple[GainSchedule, float]:
    """Backward recursion around the nominal trajectory.

    Returns the gain schedule and the expected cost decrease of a full
    (lambda = 1) step.  Lane-centering barriers are linearized with the
    predecessor state frozen at its nominal value; both the own-step and
    the successor-step contributions of each coupled term are assigned to
    the step they differentiate, so the stage gradients match the true
    gradient of the coupled cost at the nominal point.

    Raises BackwardPassError when O_uu (plus regularization) is not
    positive definite; the caller should raise regularization and retry.
    """
    X, U = traj.states, traj.controls
    N = spec.horizon
    n, m = spec.n, spec.m

    # Stage cost derivatives, vectorized over the horizon.
    ex = X[:N] - spec.cost.x_ref
    Px = 2.0 * ex @ spec.cost.Q
    Pu = 2.0 * U @ spec.cost.R
    Pxx = np.broadcast_to(2.0 * spec.cost.Q, (N, n, n)).copy()
    Puu = np.broadcast_to(2.0 * spec.cost.R, (N, m, m)).copy()
    Pux = np.zeros((N, m, n))

    for term in spec.barriers:
        z = _running_barrier_z(term, X, U)
        if term.kind is BarrierKind.LOG_RANGE:
            _, g1, g2 = _log_range_profile(term, z, t_scale)
        else:
            _, g1, g2 = _exp_profile(term, z)
        if term.kind is BarrierKind.EXP_LANE_CENTERING:
            # Own-step part: +sign * g1 at step i.  Successor part: the
            # term at i+1 differentiates to -sign * g1[i+1] w.r.t. x_i.
            gx = term.sign * g1.copy()
            gx[:-1] -= term.sign * g1[1:]
            hx = g2.copy()
            hx[:-1] += g2[1:]
            Px += np.outer(gx, term.sel_x)
            Pxx += hx[:, None, None] * np.outer(term.sel_x, term.sel_x)
        else:
            Px += np.outer(g1, term.sel_x)
            Pu += np.outer(g1, term.sel_u)
            Pxx += g2[:, None, None] * np.outer(term.sel_x, term.sel_x)
            Puu += g2[:, None, None] * np.outer(term.sel_u, term.sel_u)
            if np.any(term.sel_u != 0.0) and np.any(term.sel_x != 0.0):
                Pux += g2[:, None, None] * np.outer(term.sel_u, term.sel_x)

    # Terminal value function.
    eN = X[N] - spec.terminal_cost.x_ref
    Vx = 2.0 * spec.terminal_cost.Q @ eN
    Vxx = 2.0 * spec.terminal_cost.Q.copy()
    for term in spec.terminal_barriers:
        z = _terminal_barrier_z(term, X)
        if term.kind is BarrierKind.LOG_RANGE:
            _, g1, g2 = _log_range_profile(term, z, t_scale)
        else:
            _, g1, g2 = _exp_profile(term, z)
        chain = term.sign if term.kind is BarrierKind.EXP_LANE_CENTERING else 1.0
        Vx = Vx + (g1 * chain) * term.sel_x
        Vxx = Vxx + g2 * np.outer(term.sel_x, term.sel_x)
        if term.kind is BarrierKind.EXP_LANE_CENTERING:
            # Successor-side contribution of the terminal term lands on
            # the gradient of the last running step.
            Px[N - 1] -= (term.sign * g1) * term.sel_x
            Pxx[N - 1] += g2 * np.outer(term.sel_x, term.sel_x)

    k = np.empty((N, m))
    K = np.empty((N, m, n))
    expected_decrease = 0.0
    grad_norm = 0.0

    single = isinstance(spec.dynamics, AffineDynamics)
    if single:
        A = spec.dynamics.A
        B = spec.dynamics.B
        AT, BT = A.T, B.T
        b = B[:, 0] if m == 1 else None

    if m == 1:
        # scalar-control fast path: O_uu and the gains collapse to floats
        for i in range(N - 1, -1, -1):
            if not single:
                dyn = spec.dynamics_at(i)
                A, AT = dyn.A, dyn.A.T
                b = dyn.B[:, 0]
            Ox = Px[i] + AT @ Vx
            ou = Pu[i, 0] + b @ Vx
            VxxA = Vxx @ A
            Oxx = Pxx[i] + AT @ VxxA
            oux = Pux[i, 0] + b @ VxxA
            ouu = Puu[i, 0, 0] + b @ Vxx @ b
            ouu_reg = ouu + regularization
            if ouu_reg <= 0.0:
                raise BackwardPassError(
                    f"O_uu not positive definite at step {i}")
            ki = -ou / ouu_reg
            Ki = oux / -ouu_reg
            k[i, 0] = ki
            K[i, 0] = Ki
            Vx = Ox - (ouu * ki) * Ki
            Vxx = Oxx - ouu * (Ki[:, None] * Ki)
            Vxx = 0.5 * (Vxx + Vxx.T)
            expected_decrease -= ki * ou + 0.5 * ouu * ki * ki
            if abs(ou) > grad_norm:
                grad_norm = abs(ou)
    else:
        reg_eye = regularization * np.eye(m)
        for i in range(N - 1, -1, -1):
            dyn = spec.dynamics_at(i)
            A, B = dyn.A, dyn.B
            Ox = Px[i] + A.T @ Vx
            Ou = Pu[i] + B.T @ Vx
            VxxA = Vxx @ A
            Oxx = Pxx[i] + A.T @ VxxA
            Oux = Pux[i] + B.T @ VxxA
            Ouu = Puu[i] + B.T @ (Vxx @ B)
            Ouu_reg = Ouu + reg_eye
            try:
                np.linalg.cholesky(Ouu_reg)
            except np.linalg.LinAlgError as exc:
                raise BackwardPassError(
                    f"O_uu not positive definite at step {i}") from exc
            ki = -np.linalg.solve(Ouu_reg, Ou)
            Ki = -np.linalg.solve(Ouu_reg, Oux)
            k[i] = ki
            K[i] = Ki
            Ouu_k = Ouu @ ki
            Vx = Ox - Ki.T @ Ouu_k
            Vxx = Oxx - Ki.T @ Ouu @ Ki
            Vxx = 0.5 * (Vxx + Vxx.T)
            expected_decrease -= float(ki @ Ou + 0.5 * ki @ Ouu_k)
            g = float(np.max(np.abs(Ou)))
            if g > grad_norm:
                grad_norm = g

    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(K))):
        raise BackwardPassError("non-finite gains")
    return GainSchedule(k, K, grad_norm), float(expected_decrease)


def forward_pass(traj: Trajectory, gains: GainSchedule, lam: float,
                 spec: ProblemSpec) -> Trajectory:
    """Roll out u_i + lam * k_i + K_i (x - x_i) around the nominal."""
    states, controls = _forward_arrays(traj.states, traj.controls,
                                       gains, lam, spec)
    return Trajectory(states, controls)


def _forward_arrays(X: np.ndarray, U: np.ndarray, gains: GainSchedule,
                    lam: float, spec: ProblemSpec):
    N = spec.horizon
    k, K = gains.k, gains.K
    states = np.empty_like(X)
    controls = np.empty_like(U)
    x = X[0].copy()
    states[0] = x
    single = isinstance(spec.dynamics, AffineDynamics)
    if single:
        dyn = spec.dynamics
        A, B, drift = dyn.A, dyn.B, dyn._drift
    for i in range(N):
        if not single:
            dyn = spec.dynamics_at(i)
            A, B, drift = dyn.A, dyn.B, dyn._drift
        u = U[i] + lam * k[i] + K[i] @ (x - X[i])
        controls[i] = u
        x = A @ x + B @ u + drift
        states[i + 1] = x
    return states, controls


def _batched_candidates(X: np.ndarray, U: np.ndarray, gains: GainSchedule,
                        lams: np.ndarray, spec: ProblemSpec):
    """Roll out every line-search step size at once.

    Returns states (L, N+1, n) and controls (L, N, m) where row l is the
    forward pass with step size lams[l].
    """
    N = spec.horizon
    k, K = gains.k, gains.K
    L = lams.size
    Xs = np.empty((L, N + 1, X.shape[1]))
    Us = np.empty((L, N, U.shape[1]))
    x = np.repeat(X[0][None, :], L, axis=0)
    Xs[:, 0] = x
    single = isinstance(spec.dynamics, AffineDynamics)
    if single:
        dyn = spec.dynamics
        A, B, drift = dyn.A, dyn.B, dyn._drift
    for i in range(N):
        if not single:
            dyn = spec.dynamics_at(i)
            A, B, drift = dyn.A, dyn.B, dyn._drift
        u = U[i] + lams[:, None] * k[i] + (x - X[i]) @ K[i].T
        Us[:, i] = u
        x = x @ A.T + u @ B.T + drift
        Xs[:, i + 1] = x
    return Xs, Us


def _batched_costs(Xs: np.ndarray, Us: np.ndarray, spec: ProblemSpec,
                   t_scale: float) -> np.ndarray:
    """Cost per candidate row; infeasible or non-finite rows get inf."""
    N = spec.horizon
    ex = Xs[:, :N] - spec.cost.x_ref
    J = np.einsum("lni,ij,lnj->l", ex, spec.cost.Q, ex)
    J += np.einsum("lni,ij,lnj->l", Us, spec.cost.R, Us)
    eN = Xs[:, N] - spec.terminal_cost.x_ref
    J += np.einsum("li,ij,lj->l", eN, spec.terminal_cost.Q, eN)
    for term in spec.barriers:
        z = Xs[:, :N] @ term.sel_x + Us @ term.sel_u + term.offset
        if term.kind is BarrierKind.LOG_RANGE:
            a = z - term.lower
            b = term.upper - z
            bad = (a <= 0.0) | (b <= 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = (-1.0 / (term.t * t_scale)) * (np.log(a) + np.log(b))
            v[bad] = 0.0
            J += v.sum(axis=1)
            J[bad.any(axis=1)] = np.inf
        else:
            if term.kind is BarrierKind.EXP_LANE_CENTERING:
                prev = np.concatenate((z[:, :1], z[:, :-1]), axis=1)
                z = term.sign * (z - prev)
            e = term.q1 * np.exp(np.minimum(term.q2 * z, _EXP_ARG_MAX))
            J += e.sum(axis=1)
    for term in spec.terminal_barriers:
        z = Xs[:, N] @ term.sel_x + term.offset
        if term.kind is BarrierKind.LOG_RANGE:
            a = z - term.lower
            b = term.upper - z
            bad = (a <= 0.0) | (b <= 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = (-1.0 / (term.t * t_scale)) * (np.log(a) + np.log(b))
            v[bad] = 0.0
            J += v
            J[bad] = np.inf
        else:
            if term.kind is BarrierKind.EXP_LANE_CENTERING:
                zp = Xs[:, N - 1] @ term.sel_x + term.offset
                z = term.sign * (z - zp)
            J += term.q1 * np.exp(np.minimum(term.q2 * z, _EXP_ARG_MAX))
    return np.where(np.isfinite(J), J, np.inf)


def _clip_warm_start(spec: ProblemSpec, controls: np.ndarray) -> np.ndarray:
    """Pull control-only log-range scalars a minimum margin inside.

    Warm starts handed over by a receding-horizon caller often ride an
    active bound at microscopic margins.  There the barrier Hessian is
    enormous (1 / (t * margin^2)), which freezes the Newton step and
    keeps a stale saturated plan pinned even after the optimal sign has
    flipped.  Enforcing a small minimum interior margin keeps the local
    curvature sane; entries deeper inside are left untouched.
    """
    controls = np.array(controls, dtype=float)
    for term in spec.barriers:
        if term.kind is not BarrierKind.LOG_RANGE:
            continue
        if np.any(term.sel_x != 0.0):
            continue
        nz = np.nonzero(term.sel_u)[0]
        if nz.size != 1:
            continue
        j = nz[0]
        c = term.sel_u[j]
        z = c * controls[:, j] + term.offset
        margin = 1e-3 * (term.upper - term.lower)
        np.clip(z, term.lower + margin, term.upper - margin, out=z)
        controls[:, j] = (z - term.offset) / c
    return controls


def _log_range_margins(traj: Trajectory, spec: ProblemSpec):
    margins = []
    for term in spec.barriers:
        if term.kind is not BarrierKind.LOG_RANGE:
            continue
        z = _running_barrier_z(term, traj.states, traj.controls)
        margins.append((float(np.min(z - term.lower)),
                        float(np.min(term.upper - z))))
    return margins


def solve(spec: ProblemSpec, warm_start: np.ndarray | None = None,
          config: SolverConfig | None = None) -> SolveResult:
    """Run the constrained iLQR loop.

    Each outer iteration performs one backward pass and a backtracking
    forward line search that accepts any strict cost decrease.  The
    log-barrier sharpness multiplier grows along the configured schedule
    after every accepted iteration until it hits its cap.  Terminates
    once the predicted decrease from the backward pass is below
    cost_tolerance (relative) and no further strict improvement is found,
    or at the iteration cap.  Never aborts: on a stalled search it
    returns the best trajectory so far flagged as not converged.
    """
    cfg = config or SolverConfig()
    if warm_start is None:
        controls = np.zeros((spec.horizon, spec.m))
    else:
        warm_start = np.asarray(warm_start, dtype=float)
        if warm_start.shape != (spec.horizon, spec.m):
            raise ValueError("warm start must have shape (horizon, m)")
        controls = _clip_warm_start(spec, warm_start)

    t_scale = min(cfg.barrier_t_init, cfg.barrier_t_max)
    reg = cfg.regularization_init
    traj = rollout(spec.dynamics, spec.x0, controls)
    J = total_cost(traj, spec, t_scale)
    history = [J]
    gains: GainSchedule | None = None
    converged = False
    iterations = 0
    exp_dec = math.inf
    message = "iteration cap reached"

    for _ in range(cfg.max_outer_iterations):
        iterations += 1
        while True:
            try:
                gains, exp_dec = backward_pass(traj, spec, reg, t_scale)
                break
            except BackwardPassError:
                reg *= cfg.regularization_growth
                if reg > cfg.regularization_max:
                    message = "backward pass failed at regularization cap"
                    return _finish(traj, gains, spec, J, history, exp_dec,
                                   t_scale, reg, iterations, False, message)
        # Near-stationary iterates still try a single full step: on a
        # quadratic model that polishes the last digits, and if it fails
        # to strictly decrease the cost we declare convergence.  Both the
        # predicted decrease and the control gradient must be small: with
        # an active barrier the Hessian blows up, so the Newton decrement
        # alone can look tiny while the gradient is still large.
        scale = max(1.0, abs(J))
        stationary = (exp_dec <= cfg.cost_tolerance * scale
                      and gains.grad_norm <= cfg.gradient_tolerance * scale)
        accepted = False
        J_cand = J
        # full step first: the common case for warm starts, and the only
        # candidate near stationarity
        Xc, Uc = _forward_arrays(traj.states, traj.controls, gains, 1.0, spec)
        try:
            J_cand = _cost_arrays(Xc, Uc, spec, t_scale)
        except InfeasibleTrajectoryError:
            J_cand = math.inf
        if J_cand < J:   # NaN candidates fail this test and are skipped
            accepted = True
        elif not stationary:
            lams = []
            lam = cfg.lambda_shrink
            for _ in range(cfg.max_line_search_steps - 1):
                if lam < cfg.lambda_min:
                    break
                lams.append(lam)
                lam *= cfg.lambda_shrink
            if lams:
                Xs, Us = _batched_candidates(traj.states, traj.controls,
                                             gains, np.array(lams), spec)
                costs = _batched_costs(Xs, Us, spec, t_scale)
                better = np.nonzero(costs < J)[0]
                if better.size:
                    # lams descend, so the first hit is the longest step
                    idx = int(better[0])
                    Xc, Uc, J_cand = Xs[idx], Us[idx], float(costs[idx])
                    accepted = True

        if stationary and not accepted:
            converged = True
            message = "stationary"
            break

        if accepted:
            dJ = J - J_cand
            traj = Trajectory(Xc, Uc)
            J = J_cand
            history.append(J)
            reg = max(reg / cfg.regularization_growth, cfg.regularization_init)
            # a sub-tolerance step only counts as convergence when the
            # iterate was already near-stationary; damped steps far from
            # stationarity can produce tiny decreases without being done
            if stationary and dJ <= cfg.cost_tolerance * scale:
                converged = True
                message = "cost decrease below tolerance"
                break
            if t_scale < cfg.barrier_t_max:
                t_scale = min(t_scale * cfg.barrier_t_growth, cfg.barrier_t_max)
                J = total_cost(traj, spec, t_scale)
        else:
            reg *= cfg.regularization_growth
            if reg > cfg.regularization_max:
                message = "line search stalled at regularization cap"
                break

    return _finish(traj, gains, spec, J, history, exp_dec, t_scale, reg,
                   iterations, converged, message)


def _finish(traj, gains, spec, J, history, exp_dec, t_scale, reg,
            iterations, converged, message) -> SolveResult:
    info = SolveInfo(
        converged=converged,
        iterations=iterations,
        cost=J,
        cost_history=history,
        expected_decrease=exp_dec if math.isfinite(exp_dec) else 0.0,
        barrier_t_scale=t_scale,
        regularization=reg,
        log_range_margins=_log_range_margins(traj, spec),
        message=message,
    )
    return SolveResult(traj, gains, info)
