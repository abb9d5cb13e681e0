"""Doubly regularized gap function for the constrained lower-level problem.

For a lower-level problem  min over y in Y of f(x, y) subject to g(x, y) <= 0,
define the proximally regularized Lagrangian gap

    G(x, y, z) = max over lam >= 0 of [ f(x,y) + lam.g(x,y) - |lam - z|^2 / (2 gamma2) ]
               - min over theta in Y of [ f(x,theta) + z.g(x,theta) + |theta - y|^2 / (2 gamma1) ].

Under convexity of f(x,.) and g(x,.), G is nonnegative everywhere and zero
exactly when y solves the lower-level problem with multiplier z. The maximizer
lam* has the closed form max(0, z + gamma2 * g(x,y)); the minimizer theta* is
found by projected gradient descent on a strongly convex subproblem. G is
continuously differentiable for z >= 0 and its gradient is assembled from
first-order oracles only:

    grad_x = grad_x f(x,y) + lam*.grad_x g(x,y) - grad_x f(x,theta*) - z.grad_x g(x,theta*)
    grad_y = grad_y f(x,y) + lam*.grad_y g(x,y) - (y - theta*) / gamma1
    grad_z = -(z - lam*) / gamma2 - g(x, theta*)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problem import BilevelProblem, ConfigurationError, EvaluationError
from .rng import RandomStream

_PROBE_SEED = 0x5EED  # fixed so evaluations stay pure functions of their inputs


@dataclass(frozen=True)
class GapParams:
    """Proximal weights, multiplier cap, and inner-solve controls.

    gamma1/gamma2 weight the theta- and lambda-side proximal terms. r caps the
    auxiliary multiplier box [0, r]^p used by the solver; the gap evaluation
    itself tolerates z outside that box (the cap is enforced by the solver's
    projection, not here). gamma2 = 0 is allowed at construction only so the
    closed-form multiplier map degenerates to the identity; the full gap
    machinery requires gamma2 > 0.
    """

    gamma1: float = 1.0
    gamma2: float = 0.1
    r: float = 10.0
    inner_tol: float = 1e-10
    inner_max_iters: int = 100_000

    def __post_init__(self):
        if self.gamma1 <= 0 or self.gamma2 < 0 or self.r < 0 or self.inner_tol <= 0:
            raise ConfigurationError("need gamma1 > 0, gamma2 >= 0, r >= 0, inner_tol > 0")


@dataclass
class GapEvaluation:
    value: float
    theta_star: np.ndarray
    lambda_star: np.ndarray
    inner_iters_used: int
    converged: bool


def _require_nonneg_z(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.size and np.min(z) < 0:
        raise ValueError("z must be componentwise nonnegative")
    return z


def lambda_star(problem: BilevelProblem, params: GapParams, x, y, z) -> np.ndarray:
    """Closed-form maximizer of the proximally regularized dual side:
    max(0, z + gamma2 * g(x, y)) componentwise."""
    z = _require_nonneg_z(z)
    g = np.asarray(problem.constraint_value(x, y), dtype=np.float64)
    if g.size != problem.dim_p:
        raise ConfigurationError(f"constraint_value returned size {g.size}, expected {problem.dim_p}")
    if g.size and not np.isfinite(g.sum()):
        raise EvaluationError("constraint value non-finite in multiplier update")
    return np.maximum(0.0, z + params.gamma2 * g)


def _proximal_gradient_descent(value_fn, grad_fn, proj, anchor, gamma, start, tol, max_iters):
    """Minimize value_fn(v) + |v - anchor|^2 / (2 gamma) over a projectable set.

    Step size gamma / (1 + gamma * L_hat) with L_hat probed by finite
    differences of grad_fn along 3 fixed pseudo-random directions, then
    safeguarded by halving on any genuine increase of the composite objective
    (threshold well above rounding noise, so the safeguard stays silent at the
    convergence floor). Terminates when the projected-gradient mapping at the
    fixed probe step drops below tol.
    """
    v = proj(start)
    stream = RandomStream(_PROBE_SEED)
    scale = 1e-4 * (1.0 + np.max(np.abs(v), initial=0.0))
    g0 = np.asarray(grad_fn(v), dtype=np.float64)
    l_hat = 1e-12
    for _ in range(3):
        d = stream.normals(v.size)
        norm = np.linalg.norm(d)
        if norm == 0.0 or v.size == 0:
            continue
        d /= norm
        g1 = np.asarray(grad_fn(v + scale * d), dtype=np.float64)
        l_hat = max(l_hat, float(np.linalg.norm(g1 - g0)) / scale)
    step0 = gamma / (1.0 + gamma * 1.05 * l_hat)
    step = step0

    def composite(w):
        diff = w - anchor
        return value_fn(w) + float(diff @ diff) / (2.0 * gamma)

    f_cur = composite(v)
    if not np.isfinite(f_cur):
        raise EvaluationError("inner objective non-finite at the starting point")
    grad = g0 + (v - anchor) / gamma
    for it in range(max_iters):
        if not np.all(np.isfinite(grad)):
            raise EvaluationError("inner gradient non-finite during proximal solve")
        probe = proj(v - step0 * grad)
        if float(np.linalg.norm(v - probe)) / step0 <= tol:
            return v, it, True
        candidate = probe if step == step0 else proj(v - step * grad)
        f_new = composite(candidate)
        halvings = 0
        while f_new > f_cur + 1e-12 * max(1.0, abs(f_cur)) and halvings < 60:
            step *= 0.5
            candidate = proj(v - step * grad)
            f_new = composite(candidate)
            halvings += 1
        if halvings == 60:
            return v, it, False  # cannot make safeguarded progress
        v = candidate
        f_cur = f_new
        grad = np.asarray(grad_fn(v), dtype=np.float64) + (v - anchor) / gamma
    return v, max_iters, False


def theta_star(problem: BilevelProblem, params: GapParams, x, y, z) -> tuple[np.ndarray, int, bool]:
    """Minimize f(x, .) + z.g(x, .) + prox term over Y to params.inner_tol.

    Returns (theta, inner iterations used, converged flag); the caller decides
    how severe a hit of the iteration cap is.
    """
    z = _require_nonneg_z(z)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def value(theta):
        base = problem.lower_value(x, theta)
        if z.size:
            base += float(z @ problem.constraint_value(x, theta))
        return base

    def grad(theta):
        gy = problem.lower_grad(x, theta)[1]
        if z.size:
            gy = gy + problem.constraint_vjp(x, theta, z)[1]
        return gy

    return _proximal_gradient_descent(
        value, grad, problem.set_y.project, y, params.gamma1, y,
        params.inner_tol, params.inner_max_iters,
    )


def _gap_parts(problem, params, x, y, z, lam, theta):
    """Max- and min-side values of the gap at given (lam, theta) candidates."""
    g_y = np.asarray(problem.constraint_value(x, y), dtype=np.float64)
    f_y = problem.lower_value(x, y)
    max_part = f_y + float(lam @ g_y)
    if params.gamma2 > 0:
        diff = lam - z
        max_part -= float(diff @ diff) / (2.0 * params.gamma2)
    g_t = np.asarray(problem.constraint_value(x, theta), dtype=np.float64)
    dtheta = theta - y
    min_part = (
        problem.lower_value(x, theta)
        + float(z @ g_t)
        + float(dtheta @ dtheta) / (2.0 * params.gamma1)
    )
    return max_part, min_part


def gap_value(problem: BilevelProblem, params: GapParams, x, y, z) -> GapEvaluation:
    """Evaluate the gap: exact multiplier side, inner solve for the theta side."""
    if params.gamma2 <= 0:
        raise ConfigurationError("gap evaluation requires gamma2 > 0")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = _require_nonneg_z(z)
    lam = lambda_star(problem, params, x, y, z)
    theta, iters, converged = theta_star(problem, params, x, y, z)
    max_part, min_part = _gap_parts(problem, params, x, y, z, lam, theta)
    value = max_part - min_part
    if not np.isfinite(value):
        raise EvaluationError("gap value non-finite")
    return GapEvaluation(value, theta, lam, iters, converged)


def gap_gradient(problem: BilevelProblem, params: GapParams, x, y, z):
    """Gradient blocks of the gap with respect to (x, y, z), plus the evaluation.

    Assembled from first-order oracles at (theta*, lambda*); never touches
    second derivatives.
    """
    evaluation = gap_value(problem, params, x, y, z)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    lam = evaluation.lambda_star
    theta = evaluation.theta_star

    fx_y, fy_y = problem.lower_grad(x, y)
    vx_y, vy_y = problem.constraint_vjp(x, y, lam)
    fx_t = problem.lower_grad(x, theta)[0]
    vx_t = problem.constraint_vjp(x, theta, z)[0]
    g_t = np.asarray(problem.constraint_value(x, theta), dtype=np.float64)

    gx = fx_y + vx_y - fx_t - vx_t
    gy = fy_y + vy_y - (y - theta) / params.gamma1
    gz = -(z - lam) / params.gamma2 - g_t
    return gx, gy, gz, evaluation
