"""Independent reference computations used to verify the primary code paths.

Everything here is deliberately slow and simple: central finite differences,
brute-force grid maximization, a backtracking projected-gradient solve for
the inner proximal subproblem, and a plain normal-equations least squares.
None of it shares code with the gap-function module, so the two sides can
cross-validate each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .problem import BilevelProblem, EvaluationError

if TYPE_CHECKING:
    from .gapfn import GapParams


@dataclass
class OracleConfig:
    fd_step: float = 1e-6
    grid_points: int = 10001
    high_acc_tol: float = 1e-12
    high_acc_max_iters: int = 1_000_000

    def __post_init__(self):
        if min(self.fd_step, self.high_acc_tol) <= 0 or self.grid_points < 3:
            raise ValueError("oracle config fields must be positive (grid_points >= 3)")


def finite_diff_grad(scalar_fn, point, cfg: OracleConfig | None = None) -> np.ndarray:
    """Central-difference gradient, step scaled by 1 + max-norm of the point."""
    cfg = cfg or OracleConfig()
    point = np.asarray(point, dtype=np.float64)
    h = cfg.fd_step * (1.0 + np.max(np.abs(point), initial=0.0))
    grad = np.empty_like(point)
    for i in range(point.size):
        hi = point.copy()
        lo = point.copy()
        hi[i] += h
        lo[i] -= h
        f_hi = scalar_fn(hi)
        f_lo = scalar_fn(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise EvaluationError(f"non-finite sample while differencing coordinate {i}")
        grad[i] = (f_hi - f_lo) / (2.0 * h)
    return grad


def grid_argmax_concave_1d(fn, lo: float, hi: float, cfg: OracleConfig | None = None) -> tuple[float, float]:
    """Maximize a scalar function on [lo, hi] by grid search plus one refinement.

    Evaluates on a uniform grid, then re-grids a 10x finer window of one cell
    on each side of the best point.
    """
    cfg = cfg or OracleConfig()
    if not lo < hi:
        raise ValueError("grid search needs lo < hi")
    xs = np.linspace(lo, hi, cfg.grid_points)
    vals = np.array([fn(x) for x in xs])
    i = int(np.argmax(vals))
    cell = xs[1] - xs[0]
    left = max(lo, xs[i] - cell)
    right = min(hi, xs[i] + cell)
    fine = np.linspace(left, right, 21)
    fvals = np.array([fn(x) for x in fine])
    j = int(np.argmax(fvals))
    if fvals[j] >= vals[i]:
        return float(fine[j]), float(fvals[j])
    return float(xs[i]), float(vals[i])


def solve_inner_highacc(
    problem: BilevelProblem,
    params: "GapParams",
    x: np.ndarray,
    y: np.ndarray,
    z: np.ndarray,
    cfg: OracleConfig | None = None,
) -> tuple[np.ndarray, bool]:
    """High-accuracy solve of the proximal inner problem

        min over theta in Y of  f(x, theta) + z . g(x, theta) + |theta - y|^2 / (2 gamma1)

    by monotone projected gradient descent. The step only ever halves (on a
    genuine objective increase), so once it reaches the stable region it stays
    there and plain descent carries the gradient to the tolerance. Independent
    implementation from the gap module's single-purpose solver; returns
    (theta, converged).
    """
    cfg = cfg or OracleConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    gamma1 = params.gamma1

    def value(theta):
        base = problem.lower_value(x, theta)
        if z.size:
            base += float(z @ problem.constraint_value(x, theta))
        return base + float((theta - y) @ (theta - y)) / (2.0 * gamma1)

    def grad(theta):
        _, gy = problem.lower_grad(x, theta)
        if z.size:
            gy = gy + problem.constraint_vjp(x, theta, z)[1]
        return gy + (theta - y) / gamma1

    theta = problem.set_y.project(y.copy())
    t_probe = gamma1 / (1.0 + gamma1)  # fixed step for the stationarity test
    t = t_probe
    f_cur = value(theta)
    for _ in range(cfg.high_acc_max_iters):
        g = grad(theta)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("inner gradient non-finite in high-accuracy solve")
        probe = problem.set_y.project(theta - t_probe * g)
        if float(np.linalg.norm(theta - probe)) / t_probe <= cfg.high_acc_tol:
            return theta, True
        candidate = problem.set_y.project(theta - t * g)
        f_new = value(candidate)
        halvings = 0
        # monotone safeguard with a threshold well above rounding noise
        while f_new > f_cur + 1e-12 * max(1.0, abs(f_cur)) and halvings < 60:
            t *= 0.5
            candidate = problem.set_y.project(theta - t * g)
            f_new = value(candidate)
            halvings += 1
        if halvings == 60:
            return theta, False  # cannot make safeguarded progress
        theta = candidate
        f_cur = f_new
    return theta, False


def least_squares(design: np.ndarray, response: np.ndarray) -> np.ndarray:
    """Solve min |A w - b|^2 through the normal equations with a Cholesky factor.

    Requires full column rank; rank deficiency raises.
    """
    a = np.asarray(design, dtype=np.float64)
    b = np.asarray(response, dtype=np.float64)
    gram = a.T @ a
    rhs = a.T @ b
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError("design matrix is rank deficient") from exc
    half = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, half)
