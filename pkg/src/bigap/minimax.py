"""Extension to bilevel problems whose lower level is a convex-concave saddle.

The lower level is  min over y in Y, max over z in Z of f(x, y, z). Its saddle
set is characterized by a regularized gap function

    G(x, y, z) = max over lam in Z, min over theta in Y of
        f(x, y, lam) - |lam - z|^2 / (2 gamma2) - f(x, theta, z) - |theta - y|^2 / (2 gamma1),

which is nonnegative and zero exactly at saddle points. Unlike the
inequality-constrained case, the multiplier-side subproblem is not closed
form: both auxiliary sequences take single projected gradient steps with the
same step size. Gradient blocks:

    grad_x = grad_x f(x,y,lam*) - grad_x f(x,theta*,z)
    grad_y = grad_y f(x,y,lam*) - (y - theta*) / gamma1
    grad_z = -(z - lam*) / gamma2 - grad_z f(x,theta*,z)
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .gapfn import GapEvaluation, GapParams, _proximal_gradient_descent
from .problem import ConfigurationError, EvaluationError, ProjectableSet
from .solver import (
    STATUS_FAILURE,
    STATUS_MAX_ITERS,
    STATUS_REFERENCE,
    STATUS_RESIDUAL,
    IterState,
    SolverConfig,
    RunTrace,
    TraceRow,
    _DIVERGENCE_NORM,
    penalty_at,
)


@dataclass(frozen=True)
class MinimaxBilevelProblem:
    """Oracle bundle for a bilevel problem with a minimax lower level.

    f must be convex in y and concave in z (documented contract). All oracles
    are pure and total on set_x x set_y x set_z.
    """

    dim_x: int
    dim_y: int
    dim_z: int
    upper_value: Callable
    upper_grad: Callable  # (x, y, z) -> (gx, gy, gz)
    lower_value: Callable
    lower_grad: Callable  # (x, y, z) -> (gx, gy, gz)
    set_x: ProjectableSet = field(default_factory=ProjectableSet.full_space)
    set_y: ProjectableSet = field(default_factory=ProjectableSet.full_space)
    set_z: ProjectableSet = field(default_factory=ProjectableSet.full_space)
    reference_solution: Optional[tuple] = None


def saddle_theta_star(problem: MinimaxBilevelProblem, params: GapParams, x, y, z):
    """Minimize f(x, ., z) + |.-y|^2/(2 gamma1) over Y by projected gradient."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return _proximal_gradient_descent(
        lambda th: problem.lower_value(x, th, z),
        lambda th: problem.lower_grad(x, th, z)[1],
        problem.set_y.project, np.asarray(y, dtype=np.float64), params.gamma1,
        np.asarray(y, dtype=np.float64), params.inner_tol, params.inner_max_iters,
    )


def saddle_lambda_star(problem: MinimaxBilevelProblem, params: GapParams, x, y, z):
    """Maximize f(x, y, .) - |.-z|^2/(2 gamma2) over Z (negated minimization)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return _proximal_gradient_descent(
        lambda lm: -problem.lower_value(x, y, lm),
        lambda lm: -problem.lower_grad(x, y, lm)[2],
        problem.set_z.project, np.asarray(z, dtype=np.float64), params.gamma2,
        np.asarray(z, dtype=np.float64), params.inner_tol, params.inner_max_iters,
    )


def saddle_gap_value(problem: MinimaxBilevelProblem, params: GapParams, x, y, z) -> GapEvaluation:
    """Evaluate the saddle gap; both inner problems solved to inner_tol."""
    if params.gamma2 <= 0:
        raise ConfigurationError("saddle gap requires gamma2 > 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    theta, it_t, ok_t = saddle_theta_star(problem, params, x, y, z)
    lam, it_l, ok_l = saddle_lambda_star(problem, params, x, y, z)
    dlam = lam - z
    dth = theta - y
    value = (problem.lower_value(x, y, lam) - float(dlam @ dlam) / (2.0 * params.gamma2)
             - problem.lower_value(x, theta, z) - float(dth @ dth) / (2.0 * params.gamma1))
    if not np.isfinite(value):
        raise EvaluationError("saddle gap value non-finite")
    return GapEvaluation(value, theta, lam, it_t + it_l, ok_t and ok_l)


def saddle_gap_gradient(problem: MinimaxBilevelProblem, params: GapParams, x, y, z):
    """Gradient blocks of the saddle gap plus the evaluation record."""
    evaluation = saddle_gap_value(problem, params, x, y, z)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    theta, lam = evaluation.theta_star, evaluation.lambda_star
    fx_y = problem.lower_grad(x, y, lam)
    fx_t = problem.lower_grad(x, theta, z)
    gx = fx_y[0] - fx_t[0]
    gy = fx_y[1] - (y - theta) / params.gamma1
    gz = -(z - lam) / params.gamma2 - fx_t[2]
    return gx, gy, gz, evaluation


def _ref_distance(problem: MinimaxBilevelProblem, x, y, z) -> Optional[float]:
    """Distance to the recorded reference over the full (x, y, z) triple,
    relative when the reference is away from the origin."""
    if problem.reference_solution is None:
        return None
    ref = np.concatenate([np.asarray(v, dtype=np.float64) for v in problem.reference_solution])
    cur = np.concatenate([x, y, z])
    denom = float(np.linalg.norm(ref))
    dist = float(np.linalg.norm(cur - ref))
    return dist / denom if denom > 1e-12 else dist


def run_minimax(problem: MinimaxBilevelProblem, config: SolverConfig, start=None) -> RunTrace:
    """Single-loop solver for the minimax extension.

    Both auxiliary sequences (theta tracking the inner minimizer, lam tracking
    the inner maximizer) take one projected gradient step per iteration with
    the same step size eta; the primal triple then takes one blockwise
    projected step along the penalized-objective direction. Telemetry matches
    the constrained solver's trace schema; exact diagnostics sample the saddle
    gap and its residual.
    """
    params = config.gap_params
    gamma1, gamma2 = params.gamma1, params.gamma2
    if gamma2 <= 0:
        raise ConfigurationError("minimax solver requires gamma2 > 0")

    if start is None:
        x0, y0, z0 = np.zeros(problem.dim_x), np.zeros(problem.dim_y), np.zeros(problem.dim_z)
        theta0 = lam0 = None
    else:
        x0, y0, z0 = (np.asarray(v, dtype=np.float64) for v in start[:3])
        theta0 = np.asarray(start[3], dtype=np.float64) if len(start) > 3 else None
        lam0 = np.asarray(start[4], dtype=np.float64) if len(start) > 4 else None
    x = problem.set_x.project(x0)
    y = problem.set_y.project(y0)
    z = problem.set_z.project(z0)
    theta = problem.set_y.project(theta0) if theta0 is not None else y.copy()
    lam = problem.set_z.project(lam0) if lam0 is not None else z.copy()

    def proxy_residual(xn, yn, zn, th, lm, c_k):
        g_f = problem.upper_grad(xn, yn, zn)
        f_y = problem.lower_grad(xn, yn, lm)
        f_t = problem.lower_grad(xn, th, zn)
        psi_x = g_f[0] + c_k * (f_y[0] - f_t[0])
        psi_y = g_f[1] + c_k * (f_y[1] - (yn - th) / gamma1)
        psi_z = g_f[2] + c_k * (-(zn - lm) / gamma2 - f_t[2])
        total = 0.0
        for set_, v, d in ((problem.set_x, xn, psi_x), (problem.set_y, yn, psi_y),
                           (problem.set_z, zn, psi_z)):
            moved = set_.project(v - d)
            if set_.kind == ProjectableSet.FULL:
                total += float(d @ d)
            else:
                at = v - moved  # projected-gradient proxy on constrained blocks
                if set_.kind == ProjectableSet.BOX:
                    lo, up = set_.bounds_for(v.size)
                    at_lo, at_up = v <= lo, v >= up
                    keep = np.where(at_lo & at_up, 0.0,
                                    np.where(at_lo, np.minimum(d, 0.0),
                                             np.where(at_up, np.maximum(d, 0.0), d)))
                    total += float(keep @ keep)
                else:
                    total += float(at @ at)
        return float(np.sqrt(total))

    trace = RunTrace()
    t0 = time.monotonic()

    def diag_due(row_k: int) -> bool:
        return config.diag_every > 0 and row_k % config.diag_every == 0

    try:
        f0 = float(problem.upper_value(x, y, z))
        gap0 = res0 = None
        if diag_due(0):
            gx, gy, gz, ev = saddle_gap_gradient(problem, params, x, y, z)
            g_f = problem.upper_grad(x, y, z)
            c0 = penalty_at(config, 0)
            gap0 = ev.value
            res0 = proxy_residual(x, y, z, ev.theta_star, ev.lambda_star, c0)
        ref0 = _ref_distance(problem, x, y, z)
        trace.rows.append(TraceRow(0, time.monotonic() - t0, penalty_at(config, 0), f0,
                                   None, None, gap0, res0, None, ref0, ""))
        if (config.stop_ref_rel_err is not None and ref0 is not None
                and ref0 < config.stop_ref_rel_err):
            trace.status = STATUS_REFERENCE
        elif config.max_iters == 0:
            trace.status = STATUS_MAX_ITERS

        k = 0
        while not trace.status:
            c_k = penalty_at(config, k)
            d_theta = problem.lower_grad(x, theta, z)[1] + (theta - y) / gamma1
            d_lam = -problem.lower_grad(x, y, lam)[2] + (lam - z) / gamma2
            theta_next = problem.set_y.project(theta - config.eta * d_theta)
            lam_next = problem.set_z.project(lam - config.eta * d_lam)

            g_f = problem.upper_grad(x, y, z)
            f_y = problem.lower_grad(x, y, lam_next)
            f_t = problem.lower_grad(x, theta_next, z)
            dx = g_f[0] / c_k + f_y[0] - f_t[0]
            dy = g_f[1] / c_k + f_y[1] - (y - theta_next) / gamma1
            dz = g_f[2] / c_k - (z - lam_next) / gamma2 - f_t[2]

            dlam = lam_next - z
            dth = theta_next - y
            gap_proxy = (problem.lower_value(x, y, lam_next)
                         - float(dlam @ dlam) / (2.0 * gamma2)
                         - problem.lower_value(x, theta_next, z)
                         - float(dth @ dth) / (2.0 * gamma1))

            x_new = problem.set_x.project(x - config.alpha * dx)
            y_new = problem.set_y.project(y - config.alpha * dy)
            z_new = problem.set_z.project(z - config.alpha * dz)
            sq = float(x_new @ x_new) + float(y_new @ y_new) + float(z_new @ z_new)
            if not sq < _DIVERGENCE_NORM**2:
                trace.status = STATUS_FAILURE
                break

            x, y, z, theta, lam = x_new, y_new, z_new, theta_next, lam_next
            res_proxy = proxy_residual(x, y, z, theta, lam, c_k)
            f_val = float(problem.upper_value(x, y, z))
            if not (np.isfinite(f_val) and np.isfinite(gap_proxy) and np.isfinite(res_proxy)):
                trace.status = STATUS_FAILURE
                break

            gap_exact = res_exact = None
            if diag_due(k + 1):
                ggx, ggy, ggz, ev = saddle_gap_gradient(problem, params, x, y, z)
                g_f = problem.upper_grad(x, y, z)
                psi = (g_f[0] + c_k * ggx, g_f[1] + c_k * ggy, g_f[2] + c_k * ggz)
                total = 0.0
                for set_, v, d in ((problem.set_x, x, psi[0]), (problem.set_y, y, psi[1]),
                                   (problem.set_z, z, psi[2])):
                    moved = set_.project(v - d)
                    diff = v - moved
                    total += float(d @ d) if set_.kind == ProjectableSet.FULL else float(diff @ diff)
                gap_exact = ev.value
                res_exact = float(np.sqrt(total))
            ref_err = _ref_distance(problem, x, y, z)

            trace.rows.append(TraceRow(k + 1, time.monotonic() - t0, penalty_at(config, k + 1),
                                       f_val, gap_proxy, res_proxy, gap_exact, res_exact,
                                       None, ref_err, ""))
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
    trace.final_state = IterState(len(trace.rows) - 1, x, y, z, theta, lam)
    return trace
