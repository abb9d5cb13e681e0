"""Single-loop first-order solver for the penalized gap-function reformulation.

Each iteration performs one projected gradient step on the auxiliary variable
theta (tracking the inner minimizer), refreshes the multiplier estimate in
closed form, assembles Hessian-free update directions for (x, y, z) from the
current theta/lambda approximations, and takes one blockwise projected step.
The penalty grows as c * (k+1)^rho. Exact gap/residual/merit diagnostics are
sampled every diag_every iterations; cheap proxies are logged every iteration.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from . import oracle
from .gapfn import GapParams, gap_gradient, lambda_star
from .problem import BilevelProblem, ConfigurationError, EvaluationError, ProjectableSet

TRACE_COLUMNS = (
    "k", "time_s", "c_k", "F", "gap_proxy", "res_proxy",
    "gap_exact", "res_exact", "merit_V", "ref_rel_err", "status",
)

STATUS_MAX_ITERS = "max-iters"
STATUS_RESIDUAL = "residual-met"
STATUS_REFERENCE = "reference-met"
STATUS_FAILURE = "oracle-failure"

_DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class LipschitzEstimates:
    """User-estimated smoothness constants, used only for diagnostics.

    l_f bounds the lower-objective gradient's Lipschitz constant, l_g1 the
    constraint x-gradient's, l_g the constraint map's, and f_lower is a lower
    bound on the upper objective over the feasible sets. The algorithm itself
    never needs these.
    """

    l_f: float
    l_g1: float
    l_g: float
    f_lower: Optional[float] = None

    def c_theta(self, params: GapParams) -> float:
        return self.l_f + params.r * self.l_g1 + 1.0 / params.gamma1 + self.l_g


@dataclass(frozen=True)
class SolverConfig:
    """Step sizes, penalty schedule, budgets, and stopping rules.

    alpha is the primal step on (x, y, z); eta the theta step. penalty_rho
    must lie in [0, 0.5). diag_every = 0 disables exact diagnostics.
    stop_residual / stop_ref_rel_err stop the run early when the per-iteration
    residual proxy, respectively the relative distance of x to the reference
    solution, falls below the threshold.
    """

    alpha: float = 1e-3
    eta: float = 1e-2
    penalty_c: float = 1.0
    penalty_rho: float = 0.3
    gap_params: GapParams = field(default_factory=GapParams)
    max_iters: int = 200_000
    diag_every: int = 100
    stop_residual: Optional[float] = None
    stop_ref_rel_err: Optional[float] = None
    seed: int = 0
    lipschitz: Optional[LipschitzEstimates] = None

    def __post_init__(self):
        if self.alpha < 0 or self.eta < 0:
            raise ConfigurationError("step sizes must be nonnegative")
        if self.penalty_c <= 0:
            raise ConfigurationError("penalty_c must be positive")
        if not 0.0 <= self.penalty_rho < 0.5:
            raise ConfigurationError("penalty_rho must lie in [0, 0.5)")
        if self.max_iters < 0 or self.diag_every < 0:
            raise ConfigurationError("max_iters and diag_every must be nonnegative")


@dataclass
class IterState:
    """Current iterate; feasibility (x in X, y/theta in Y, z in [0,r]^p,
    lam >= 0) is maintained by the projections in every update."""

    k: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    lam: np.ndarray


class TraceRow(NamedTuple):
    k: int
    time_s: float
    c_k: float
    F: float
    gap_proxy: Optional[float]
    res_proxy: Optional[float]
    gap_exact: Optional[float]
    res_exact: Optional[float]
    merit_V: Optional[float]
    ref_rel_err: Optional[float]
    status: str


@dataclass
class RunTrace:
    """Per-iteration telemetry plus the terminal status and final iterate."""

    rows: list[TraceRow] = field(default_factory=list)
    status: str = ""
    final_state: Optional["IterState"] = None

    def column(self, name: str) -> list:
        idx = TRACE_COLUMNS.index(name)
        return [row[idx] for row in self.rows]

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def iterations(self) -> int:
        return self.rows[-1].k if self.rows else 0

    def _cells(self, row: TraceRow) -> list[str]:
        cells = []
        for value in row:
            if value is None:
                cells.append("")
            elif isinstance(value, str):
                cells.append(value)
            elif isinstance(value, (int, np.integer)):
                cells.append(str(int(value)))
            else:
                cells.append(repr(float(value)))
        return cells

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(TRACE_COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(self._cells(row)) + "\n")

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.rows:
                record = {name: row[i] for i, name in enumerate(TRACE_COLUMNS)}
                record["status"] = record["status"] or None
                fh.write(json.dumps(record) + "\n")


def penalty_at(config: SolverConfig, k: int) -> float:
    """Penalty weight c * (k+1)^rho; nondecreasing in k."""
    if k < 0:
        raise ConfigurationError("iteration index must be nonnegative")
    return config.penalty_c * float(k + 1) ** config.penalty_rho


def step_theta(problem: BilevelProblem, params: GapParams, config: SolverConfig,
               state: IterState) -> np.ndarray:
    """One projected gradient step of theta toward the inner minimizer."""
    gy = problem.lower_grad(state.x, state.theta)[1]
    if state.z.size:
        gy = gy + problem.constraint_vjp(state.x, state.theta, state.z)[1]
    d_theta = gy + (state.theta - state.y) / params.gamma1
    if not math.isfinite(float(d_theta @ d_theta)):
        raise EvaluationError("theta direction non-finite")
    return problem.set_y.project(state.theta - config.eta * d_theta)


def step_lambda(problem: BilevelProblem, params: GapParams, state: IterState) -> np.ndarray:
    """Closed-form multiplier refresh; identical to the gap module's maximizer."""
    return lambda_star(problem, params, state.x, state.y, state.z)


def directions(problem: BilevelProblem, params: GapParams, config: SolverConfig,
               state: IterState, theta_next: np.ndarray, lambda_next: np.ndarray,
               c_k: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hessian-free update directions: the penalized-objective gradient with
    (theta_next, lambda_next) standing in for the exact inner solutions."""
    x, y, z = state.x, state.y, state.z
    g_fx, g_fy = problem.upper_grad(x, y)
    f_x, f_y = problem.lower_grad(x, y)
    v_x, v_y = problem.constraint_vjp(x, y, lambda_next)
    f_xt = problem.lower_grad(x, theta_next)[0]
    v_xt = problem.constraint_vjp(x, theta_next, z)[0]
    g_t = np.asarray(problem.constraint_value(x, theta_next), dtype=np.float64)

    dx = g_fx / c_k + f_x + v_x - f_xt - v_xt
    dy = g_fy / c_k + f_y + v_y - (y - theta_next) / params.gamma1
    if z.size:
        dz = -(z - lambda_next) / params.gamma2 - g_t
    else:
        dz = np.zeros(0)
    sq = float(dx @ dx) + float(dy @ dy) + float(dz @ dz)
    if not math.isfinite(sq):
        raise EvaluationError("update direction non-finite")
    return dx, dy, dz


def step_primal(problem: BilevelProblem, config: SolverConfig, state: IterState,
                dx: np.ndarray, dy: np.ndarray, dz: np.ndarray):
    """Blockwise projected step on (x, y, z); the z block lives in [0, r]^p."""
    r = config.gap_params.r
    x_new = problem.set_x.project(state.x - config.alpha * dx)
    y_new = problem.set_y.project(state.y - config.alpha * dy)
    z_new = np.clip(state.z - config.alpha * dz, 0.0, r)
    return x_new, y_new, z_new


def _box_contrib_sq(v: np.ndarray, lo: np.ndarray, up: np.ndarray, d: np.ndarray) -> float:
    """Squared normal-cone distance contribution of one box block."""
    at_lo = v <= lo
    at_up = v >= up
    keep = np.where(at_lo & at_up, 0.0,
                    np.where(at_lo, np.minimum(d, 0.0),
                             np.where(at_up, np.maximum(d, 0.0), d)))
    return float(keep @ keep)


def _block_contrib_sq(set_: ProjectableSet, v: np.ndarray, d: np.ndarray) -> float:
    if v.size == 0:
        return 0.0
    if set_.kind == ProjectableSet.FULL:
        return float(d @ d)
    if set_.kind == ProjectableSet.BOX:
        lo, up = set_.bounds_for(v.size)
        return _box_contrib_sq(v, lo, up, d)
    moved = set_.project(v - d)  # projected-gradient proxy for custom sets
    diff = v - moved
    return float(diff @ diff)


def residual(problem: BilevelProblem, params: GapParams, state_next: IterState,
             grad_psi: tuple[np.ndarray, np.ndarray, np.ndarray]) -> float:
    """Distance from zero to grad_psi plus the normal cone of X x Y x [0,r]^p.

    Computed componentwise for box and full-space blocks: an interior
    coordinate contributes |d_i|; a coordinate at its lower bound contributes
    |d_i| only when d_i < 0, at its upper bound only when d_i > 0. Custom sets
    fall back to the projected-gradient proxy.
    """
    gx, gy, gz = grad_psi
    total = _block_contrib_sq(problem.set_x, state_next.x, gx)
    total += _block_contrib_sq(problem.set_y, state_next.y, gy)
    if state_next.z.size:
        lo = np.zeros(state_next.z.size)
        up = np.full(state_next.z.size, params.r)
        total += _box_contrib_sq(state_next.z, lo, up, gz)
    return float(np.sqrt(total))


def merit_value(problem: BilevelProblem, params: GapParams, config: SolverConfig,
                state: IterState, c_k: float, lipschitz_estimates: LipschitzEstimates,
                oracle_cfg: Optional[oracle.OracleConfig] = None) -> tuple[float, bool]:
    """Merit (F - F_lower)/c_k + gap + C_theta * |theta - theta*|^2.

    theta* comes from the independent high-accuracy oracle solve. Returns
    (value, reliable); reliable is False when that solve hit its cap.
    """
    if lipschitz_estimates.f_lower is None:
        raise ConfigurationError("merit needs a lower bound f_lower on the upper objective")
    cfg = oracle_cfg or oracle.OracleConfig()
    th_star, ok = oracle.solve_inner_highacc(problem, params, state.x, state.y, state.z, cfg)
    lam = lambda_star(problem, params, state.x, state.y, state.z)

    g_y = np.asarray(problem.constraint_value(state.x, state.y), dtype=np.float64)
    max_part = problem.lower_value(state.x, state.y) + float(lam @ g_y)
    diff = lam - state.z
    max_part -= float(diff @ diff) / (2.0 * params.gamma2)
    g_t = np.asarray(problem.constraint_value(state.x, th_star), dtype=np.float64)
    dth = th_star - state.y
    min_part = (problem.lower_value(state.x, th_star) + float(state.z @ g_t)
                + float(dth @ dth) / (2.0 * params.gamma1))
    gap = max_part - min_part

    track = state.theta - th_star
    value = ((problem.upper_value(state.x, state.y) - lipschitz_estimates.f_lower) / c_k
             + gap + lipschitz_estimates.c_theta(params) * float(track @ track))
    return value, ok


def _ref_rel_err(problem: BilevelProblem, x: np.ndarray) -> Optional[float]:
    if problem.reference_solution is None:
        return None
    x_ref = problem.reference_solution[0]
    diff = x - x_ref
    dist = math.sqrt(float(diff @ diff))
    denom = math.sqrt(float(x_ref @ x_ref))
    return dist / denom if denom > 0 else dist


def _prepare_start(problem: BilevelProblem, params: GapParams, start):
    if start is None:
        x0 = np.zeros(problem.dim_x)
        y0 = np.zeros(problem.dim_y)
        z0 = np.zeros(problem.dim_p)
        theta0 = None
    else:
        x0, y0, z0 = (np.asarray(v, dtype=np.float64) for v in start[:3])
        theta0 = np.asarray(start[3], dtype=np.float64) if len(start) > 3 else None
    x = problem.set_x.project(x0)
    y = problem.set_y.project(y0)
    z = np.clip(z0, 0.0, params.r)
    theta = problem.set_y.project(theta0) if theta0 is not None else y.copy()
    if x.size != problem.dim_x or y.size != problem.dim_y or z.size != problem.dim_p:
        raise ConfigurationError("start point dimensions do not match the problem")
    return IterState(0, x, y, z, theta, np.zeros(problem.dim_p))


def run(problem: BilevelProblem, config: SolverConfig, start=None) -> RunTrace:
    """Execute the single-loop solver and return the telemetry trace.

    Per iteration: theta step, closed-form multiplier, update directions with
    penalty c_k, blockwise projected primal step. Proxy gap/residual are logged
    every iteration; exact diagnostics every diag_every iterations. Stops on
    the iteration budget, the residual threshold, or the reference-distance
    threshold; oracle failures and divergence end the run with a partial trace.
    """
    params = config.gap_params
    gamma1, gamma2 = params.gamma1, params.gamma2
    state = _prepare_start(problem, params, start)
    trace = RunTrace()
    t0 = time.monotonic()

    def diag_due(row_k: int) -> bool:
        return config.diag_every > 0 and row_k % config.diag_every == 0

    def exact_diagnostics(row_k: int, c_for_res: float):
        gx, gy, gz, evaluation = gap_gradient(problem, params, state.x, state.y, state.z)
        g_fx, g_fy = problem.upper_grad(state.x, state.y)
        psi = (g_fx + c_for_res * gx, g_fy + c_for_res * gy, c_for_res * gz)
        res = residual(problem, params, state, psi)
        merit = None
        if config.lipschitz is not None:
            lips = config.lipschitz
            if lips.f_lower is None:
                observed = [row.F for row in trace.rows] + [problem.upper_value(state.x, state.y)]
                lips = replace(lips, f_lower=min(observed) - 1.0)
            merit, _ = merit_value(problem, params, config, state, penalty_at(config, row_k), lips)
        return evaluation.value, res, merit

    try:
        f0 = float(problem.upper_value(state.x, state.y))
        gap0 = res0 = merit0 = None
        if diag_due(0):
            gap0, res0, merit0 = exact_diagnostics(0, penalty_at(config, 0))
        ref0 = _ref_rel_err(problem, state.x)
        trace.rows.append(TraceRow(0, time.monotonic() - t0, penalty_at(config, 0), f0,
                                   None, None, gap0, res0, merit0, ref0, ""))
        if (config.stop_ref_rel_err is not None and ref0 is not None
                and ref0 < config.stop_ref_rel_err):
            trace.status = STATUS_REFERENCE
        elif config.max_iters == 0:
            trace.status = STATUS_MAX_ITERS

        k = 0
        has_z = problem.dim_p > 0
        empty = np.zeros(0)
        while not trace.status:
            c_k = penalty_at(config, k)
            x, y, z, theta = state.x, state.y, state.z, state.theta

            # theta step (one projected gradient step toward the inner minimizer)
            gy_t = problem.lower_grad(x, theta)[1]
            if has_z:
                gy_t = gy_t + problem.constraint_vjp(x, theta, z)[1]
            theta_next = problem.set_y.project(theta - config.eta * (gy_t + (theta - y) / gamma1))

            # closed-form multiplier refresh
            g_xy = problem.constraint_value(x, y) if has_z else empty
            lam_next = np.maximum(0.0, z + gamma2 * g_xy) if has_z else empty

            # update directions at the pre-update point
            g_fx, g_fy = problem.upper_grad(x, y)
            f_x, f_y = problem.lower_grad(x, y)
            f_xt = problem.lower_grad(x, theta_next)[0]
            if has_z:
                v_x, v_y = problem.constraint_vjp(x, y, lam_next)
                v_xt = problem.constraint_vjp(x, theta_next, z)[0]
                g_xt = problem.constraint_value(x, theta_next)
                dx = g_fx / c_k + f_x + v_x - f_xt - v_xt
                dy = g_fy / c_k + f_y + v_y - (y - theta_next) / gamma1
                dz = -(z - lam_next) / gamma2 - g_xt
            else:
                g_xt = empty
                dx = g_fx / c_k + f_x - f_xt
                dy = g_fy / c_k + f_y - (y - theta_next) / gamma1
                dz = empty

            # proxy gap at the pre-update point with this iteration's theta/lambda
            dlam = lam_next - z
            dth = theta_next - y
            gap_proxy = (problem.lower_value(x, y) + float(lam_next @ g_xy)
                         - float(dlam @ dlam) / (2.0 * gamma2)
                         - problem.lower_value(x, theta_next) - float(z @ g_xt)
                         - float(dth @ dth) / (2.0 * gamma1))

            x_new = problem.set_x.project(x - config.alpha * dx)
            y_new = problem.set_y.project(y - config.alpha * dy)
            z_new = np.clip(z - config.alpha * dz, 0.0, params.r) if has_z else empty
            sq = float(x_new @ x_new) + float(y_new @ y_new) + float(z_new @ z_new) \
                + float(theta_next @ theta_next)
            if not sq < _DIVERGENCE_NORM**2:
                trace.status = STATUS_FAILURE
                break

            state = IterState(k + 1, x_new, y_new, z_new, theta_next, lam_next)

            # residual proxy at the post-update iterate, penalty of the producing step
            g_fx, g_fy = problem.upper_grad(x_new, y_new)
            f_x, f_y = problem.lower_grad(x_new, y_new)
            f_xt = problem.lower_grad(x_new, theta_next)[0]
            if has_z:
                v_x, v_y = problem.constraint_vjp(x_new, y_new, lam_next)
                v_xt = problem.constraint_vjp(x_new, theta_next, z_new)[0]
                g_nt = problem.constraint_value(x_new, theta_next)
                psi_x = g_fx + c_k * (f_x + v_x - f_xt - v_xt)
                psi_y = g_fy + c_k * (f_y + v_y - (y_new - theta_next) / gamma1)
                psi_z = c_k * (-(z_new - lam_next) / gamma2 - g_nt)
            else:
                psi_x = g_fx + c_k * (f_x - f_xt)
                psi_y = g_fy + c_k * (f_y - (y_new - theta_next) / gamma1)
                psi_z = empty
            res_proxy = residual(problem, params, state, (psi_x, psi_y, psi_z))

            f_val = float(problem.upper_value(x_new, y_new))
            if not (math.isfinite(f_val) and math.isfinite(gap_proxy) and math.isfinite(res_proxy)):
                trace.status = STATUS_FAILURE
                break

            gap_exact = res_exact = merit = None
            if diag_due(k + 1):
                gap_exact, res_exact, merit = exact_diagnostics(k + 1, c_k)
            ref_err = _ref_rel_err(problem, x_new)

            trace.rows.append(TraceRow(k + 1, time.monotonic() - t0, penalty_at(config, k + 1),
                                       f_val, gap_proxy, res_proxy, gap_exact, res_exact,
                                       merit, ref_err, ""))

            if (config.stop_ref_rel_err is not None and ref_err is not None
                    and ref_err < config.stop_ref_rel_err):
                trace.status = STATUS_REFERENCE
            elif config.stop_residual is not None and res_proxy <= config.stop_residual:
                trace.status = STATUS_RESIDUAL
            elif k + 1 >= config.max_iters:
                trace.status = STATUS_MAX_ITERS
            k += 1
    except EvaluationError:
        trace.status = STATUS_FAILURE

    if trace.rows:
        trace.rows[-1] = trace.rows[-1]._replace(status=trace.status)
    trace.final_state = state
    return trace
