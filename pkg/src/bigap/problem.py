"""Bilevel problem abstraction: first-order oracles and projectable sets.

A problem is a bundle of matrix-free callbacks: values and gradients of the
upper and lower objectives, and the lower-level constraint map exposed only
through its value and vector-Jacobian products (never a dense Jacobian).
Convexity of the lower objective and constraints in the lower variable is a
documented caller obligation; it is not (and cannot be) checked at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import RandomStream


class ConfigurationError(ValueError):
    """Bad dimensions, invalid parameters, or malformed configuration."""


class EvaluationError(RuntimeError):
    """An oracle produced a non-finite or otherwise unusable value."""


def _as_vector(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional, got shape {a.shape}")
    return a


class ProjectableSet:
    """Closed convex set with a Euclidean projection oracle.

    Three kinds: the full space (projection is the identity), an axis-aligned
    box with optionally infinite bounds (componentwise clamp), and a custom
    set given by a user projection callback (trusted, not verified).
    """

    FULL = "full-space"
    BOX = "box"
    CUSTOM = "custom"

    def __init__(self, kind: str, lower=None, upper=None, projector=None):
        self.kind = kind
        self.lower = None if lower is None else np.asarray(lower, dtype=np.float64)
        self.upper = None if upper is None else np.asarray(upper, dtype=np.float64)
        self.projector = projector
        if kind == self.BOX:
            lo, up = np.broadcast_arrays(self.lower, self.upper)
            both = np.isfinite(lo) & np.isfinite(up)
            if np.any(lo[both] > up[both]):
                raise ConfigurationError("box set requires lower <= upper where both are finite")

    @classmethod
    def full_space(cls) -> "ProjectableSet":
        return cls(cls.FULL)

    @classmethod
    def box(cls, lower, upper) -> "ProjectableSet":
        """Box with scalar or vector bounds; use +-inf for unbounded sides."""
        return cls(cls.BOX, lower=lower, upper=upper)

    @classmethod
    def nonnegative(cls) -> "ProjectableSet":
        return cls(cls.BOX, lower=0.0, upper=np.inf)

    @classmethod
    def custom(cls, projector: Callable[[np.ndarray], np.ndarray]) -> "ProjectableSet":
        return cls(cls.CUSTOM, projector=projector)

    def _check_dim(self, v: np.ndarray) -> None:
        for bound in (self.lower, self.upper):
            if bound is not None and bound.ndim == 1 and bound.size != v.size:
                raise ConfigurationError(
                    f"dimension mismatch: set bound has size {bound.size}, vector has size {v.size}"
                )

    def project(self, v) -> np.ndarray:
        v = _as_vector(v)
        if self.kind == self.FULL:
            return v
        if self.kind == self.BOX:
            self._check_dim(v)
            return np.clip(v, self.lower, self.upper)
        return _as_vector(self.projector(v), "custom projection output")

    def bounds_for(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Broadcast lower/upper bounds to a given dimension (box sets only)."""
        lo = np.broadcast_to(self.lower, (dim,))
        up = np.broadcast_to(self.upper, (dim,))
        return lo, up


def project(set_: ProjectableSet, v) -> np.ndarray:
    """Euclidean projection of v onto the set."""
    return set_.project(v)


def _empty_constraint(x, y):
    return np.zeros(0)


def _empty_vjp(x, y, lam):
    return np.zeros_like(np.asarray(x, dtype=float)), np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class BilevelProblem:
    """First-order oracle bundle for a constrained bilevel problem.

    All callbacks must be pure (same inputs give same outputs) and total on
    set_x x set_y. dim_p = 0 means an unconstrained lower level; the
    constraint oracles then default to empty-vector stubs.
    """

    dim_x: int
    dim_y: int
    dim_p: int
    upper_value: Callable[[np.ndarray, np.ndarray], float]
    upper_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    lower_value: Callable[[np.ndarray, np.ndarray], float]
    lower_grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]
    constraint_value: Optional[Callable] = None
    constraint_vjp: Optional[Callable] = None
    set_x: ProjectableSet = field(default_factory=ProjectableSet.full_space)
    set_y: ProjectableSet = field(default_factory=ProjectableSet.full_space)
    reference_solution: Optional[tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if min(self.dim_x, self.dim_y, self.dim_p) < 0:
            raise ConfigurationError("dimensions must be nonnegative")
        if self.dim_p == 0:
            if self.constraint_value is None:
                object.__setattr__(self, "constraint_value", _empty_constraint)
            if self.constraint_vjp is None:
                object.__setattr__(self, "constraint_vjp", _empty_vjp)
        elif self.constraint_value is None or self.constraint_vjp is None:
            raise ConfigurationError("dim_p > 0 requires constraint_value and constraint_vjp")


@dataclass
class ValidationReport:
    """Per-oracle maximum relative derivative errors from finite differencing.

    Entries are None for oracles that do not apply (no constraints). An entry
    passes when its error is at most tol; failures lists any non-finite oracle
    outputs encountered, naming the oracle and the point.
    """

    max_errors: dict[str, Optional[float]]
    tol: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        if self.failures:
            return False
        return all(e is None or e <= self.tol for e in self.max_errors.values())

    def summary(self) -> str:
        lines = []
        for name, err in self.max_errors.items():
            shown = "n/a" if err is None else f"{err:.3e}"
            lines.append(f"{name}: {shown}")
        for msg in self.failures:
            lines.append(f"FAILURE: {msg}")
        lines.append(f"result: {'pass' if self.passed else 'fail'} (tol={self.tol:g})")
        return "\n".join(lines)


def _central_diff(fn, point: np.ndarray, step: float) -> np.ndarray:
    grad = np.empty_like(point)
    for i in range(point.size):
        p_hi = point.copy()
        p_lo = point.copy()
        p_hi[i] += step
        p_lo[i] -= step
        grad[i] = (fn(p_hi) - fn(p_lo)) / (2.0 * step)
    return grad


def _rel_err(user: np.ndarray, fd: np.ndarray) -> float:
    if user.size == 0:
        return 0.0
    return float(np.max(np.abs(user - fd) / np.maximum(1e-6, np.abs(fd))))


def validate_gradients(
    problem: BilevelProblem,
    samples: int = 10,
    step: float = 1e-6,
    seed: int = 0,
    tol: float = 1e-4,
) -> ValidationReport:
    """Check user gradients and constraint VJPs against central differences.

    Draws `samples` pseudo-random points, projects them onto the feasible
    sets, and compares each gradient oracle with a finite-difference estimate
    of the matching value oracle (step scaled by 1 + the point's max norm).
    VJPs are checked through the scalar map (x, y) -> lam . g(x, y) with a
    random nonnegative lam per sample.
    """
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    if step <= 0:
        raise ConfigurationError("step must be positive")
    stream = RandomStream(seed)
    names = ["upper_grad_x", "upper_grad_y", "lower_grad_x", "lower_grad_y"]
    if problem.dim_p > 0:
        names += ["constraint_vjp_x", "constraint_vjp_y"]
    worst: dict[str, Optional[float]] = {n: 0.0 for n in names}
    if problem.dim_p == 0:
        worst["constraint_vjp_x"] = None
        worst["constraint_vjp_y"] = None
    failures: list[str] = []

    for s in range(samples):
        x = problem.set_x.project(stream.normals(problem.dim_x))
        y = problem.set_y.project(stream.normals(problem.dim_y))
        lam = np.abs(stream.normals(problem.dim_p)) if problem.dim_p else np.zeros(0)
        hx = step * (1.0 + np.max(np.abs(x), initial=0.0))
        hy = step * (1.0 + np.max(np.abs(y), initial=0.0))

        checks = [
            ("upper_grad_x", lambda v: problem.upper_value(v, y), x, hx,
             lambda: problem.upper_grad(x, y)[0]),
            ("upper_grad_y", lambda v: problem.upper_value(x, v), y, hy,
             lambda: problem.upper_grad(x, y)[1]),
            ("lower_grad_x", lambda v: problem.lower_value(v, y), x, hx,
             lambda: problem.lower_grad(x, y)[0]),
            ("lower_grad_y", lambda v: problem.lower_value(x, v), y, hy,
             lambda: problem.lower_grad(x, y)[1]),
        ]
        if problem.dim_p > 0:
            checks += [
                ("constraint_vjp_x", lambda v: float(lam @ problem.constraint_value(v, y)), x, hx,
                 lambda: problem.constraint_vjp(x, y, lam)[0]),
                ("constraint_vjp_y", lambda v: float(lam @ problem.constraint_value(x, v)), y, hy,
                 lambda: problem.constraint_vjp(x, y, lam)[1]),
            ]

        for name, scalar_fn, point, h, user_fn in checks:
            user = _as_vector(user_fn(), name)
            if not np.all(np.isfinite(user)):
                failures.append(f"{name} returned non-finite values at sample {s}, point {point!r}")
                continue
            fd = _central_diff(scalar_fn, point, h)
            if not np.all(np.isfinite(fd)):
                failures.append(f"value oracle behind {name} non-finite near sample {s}, point {point!r}")
                continue
            worst[name] = max(worst[name], _rel_err(user, fd))

    return ValidationReport(max_errors=worst, tol=tol, failures=failures)
