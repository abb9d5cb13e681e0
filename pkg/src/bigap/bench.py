"""Benchmark problem factories with seeded, bit-reproducible data generation.

Three families:

* a synthetic instance with a known optimum, whose lower level carries a
  single equality constraint encoded as two opposing inequalities;
* a sparse group lasso hyperparameter-selection problem on generated data,
  with squared group-norm constraints plus one l1 constraint;
* a small strongly convex-concave minimax toy with a closed-form saddle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .minimax import MinimaxBilevelProblem
from .problem import BilevelProblem, ConfigurationError, ProjectableSet
from .rng import RandomStream


@dataclass(frozen=True)
class SyntheticSpec:
    """Block dimension n and the exponent q of the coupling term t^q."""

    n: int
    q: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("n must be >= 1")
        if self.q not in (1, 3):
            raise ConfigurationError("q must be 1 or 3")


def make_synthetic(spec: SyntheticSpec) -> BilevelProblem:
    """Bilevel instance with known optimum x* = 1, y* = (2, -3) blockwise.

    Upper objective (y1 - 2).(x - 1) + |y2 + 3|^2 over x in R^n and
    y = (y1, y2) in R^2n; lower objective |y1|^2/2 - x.y1 + 1.y2 subject to
    sum_i x_i^q + 1.y1 + 1.y2 = 0. The equality is encoded as the inequality
    pair (e <= 0, -e <= 0), so dim_p = 2 and the multiplier set is the line
    lam2 - lam1 = 1.
    """
    n, q = spec.n, spec.q
    ones = np.ones(n)

    def split(y):
        return y[:n], y[n:]

    def upper_value(x, y):
        y1, y2 = split(y)
        t = y2 + 3.0
        return float((y1 - 2.0) @ (x - 1.0)) + float(t @ t)

    def upper_grad(x, y):
        y1, y2 = split(y)
        return y1 - 2.0, np.concatenate([x - 1.0, 2.0 * (y2 + 3.0)])

    def lower_value(x, y):
        y1, y2 = split(y)
        return 0.5 * float(y1 @ y1) - float(x @ y1) + float(y2.sum())

    def lower_grad(x, y):
        y1, _ = split(y)
        return -y1, np.concatenate([y1 - x, ones])

    def equality(x, y):
        coupling = x.sum() if q == 1 else (x * x * x).sum()
        return float(coupling + y.sum())

    def constraint_value(x, y):
        e = equality(x, y)
        return np.array([e, -e])

    def constraint_vjp(x, y, lam):
        w = lam[0] - lam[1]
        de_dx = w * ones if q == 1 else (3.0 * w) * (x * x)
        return de_dx, np.full(2 * n, w)

    reference = (ones.copy(), np.concatenate([2.0 * ones, -3.0 * ones]))
    return BilevelProblem(
        dim_x=n, dim_y=2 * n, dim_p=2,
        upper_value=upper_value, upper_grad=upper_grad,
        lower_value=lower_value, lower_grad=lower_grad,
        constraint_value=constraint_value, constraint_vjp=constraint_vjp,
        set_x=ProjectableSet.full_space(), set_y=ProjectableSet.full_space(),
        reference_solution=reference,
    )


def synthetic_start(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Canonical start (x, y1, y2) = (0, 1, 1) blockwise, z = 0."""
    return np.zeros(n), np.concatenate([np.ones(n), np.ones(n)]), np.zeros(2)


@dataclass(frozen=True)
class SglSpec:
    """Sparse group lasso data shape: p features in m_groups equal groups."""

    p: int = 150
    m_groups: int = 30
    n_tr: int = 100
    n_val: int = 100
    n_test: int = 300
    snr: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.p % self.m_groups != 0:
            raise ConfigurationError("p must be divisible by m_groups")
        if min(self.n_tr, self.n_val, self.n_test) < 1:
            raise ConfigurationError("split sizes must be >= 1")
        if self.snr <= 0:
            raise ConfigurationError("snr must be positive")


@dataclass
class DataSplit:
    a_train: np.ndarray
    b_train: np.ndarray
    a_val: np.ndarray
    b_val: np.ndarray
    a_test: np.ndarray
    b_test: np.ndarray
    beta_true: np.ndarray
    noise_sigma: float


def _sgl_beta(p: int, m_groups: int, group_size: int) -> np.ndarray:
    """Grouped-sparse ground truth: the first five groups (fewer on tiny
    instances) carry (1..5) in their first five entries, the rest is zero."""
    beta = np.zeros(p)
    ramp = np.arange(1.0, 6.0)
    for g in range(min(5, m_groups)):
        start = g * group_size
        width = min(5, group_size)
        beta[start:start + width] = ramp[:width]
    return beta


def generate_sgl_data(spec: SglSpec) -> DataSplit:
    """Standard-normal features, grouped-sparse signal, noise level set so the
    signal-to-noise amplitude ratio |beta| / sigma equals spec.snr."""
    stream = RandomStream(spec.seed)
    group_size = spec.p // spec.m_groups
    beta = _sgl_beta(spec.p, spec.m_groups, group_size)
    total = spec.n_tr + spec.n_val + spec.n_test
    a = stream.normal_matrix(total, spec.p)
    sigma = float(np.linalg.norm(beta)) / spec.snr
    b = a @ beta + sigma * stream.normals(total)
    i1, i2 = spec.n_tr, spec.n_tr + spec.n_val
    return DataSplit(
        a_train=a[:i1], b_train=b[:i1],
        a_val=a[i1:i2], b_val=b[i1:i2],
        a_test=a[i2:], b_test=b[i2:],
        beta_true=beta, noise_sigma=sigma,
    )


def make_sgl(spec: SglSpec) -> tuple[BilevelProblem, DataSplit]:
    """Hyperparameter-selection bilevel problem for the sparse group lasso.

    Upper variables u in R_+^{M+1} bound the squared group norms and the l1
    norm of the lower coefficient vector; the upper objective is the
    validation squared loss, the lower objective the training squared loss,
    both averaged over their samples so step sizes are sample-count free.
    The l1 row's subgradient uses sign(beta) with 0 at zero entries.
    """
    data = generate_sgl_data(spec)
    p, m = spec.p, spec.m_groups
    group_size = p // m
    gram_tr = data.a_train.T @ data.a_train / spec.n_tr
    rhs_tr = data.a_train.T @ data.b_train / spec.n_tr
    gram_val = data.a_val.T @ data.a_val / spec.n_val
    rhs_val = data.a_val.T @ data.b_val / spec.n_val
    b_tr_sq = 0.5 * float(data.b_train @ data.b_train) / spec.n_tr
    b_val_sq = 0.5 * float(data.b_val @ data.b_val) / spec.n_val
    zeros_u = np.zeros(m + 1)

    def group_view(beta):
        return beta.reshape(m, group_size)

    def upper_value(u, beta):
        return 0.5 * float(beta @ (gram_val @ beta)) - float(rhs_val @ beta) + b_val_sq

    def upper_grad(u, beta):
        return zeros_u, gram_val @ beta - rhs_val

    def lower_value(u, beta):
        return 0.5 * float(beta @ (gram_tr @ beta)) - float(rhs_tr @ beta) + b_tr_sq

    def lower_grad(u, beta):
        return zeros_u, gram_tr @ beta - rhs_tr

    def constraint_value(u, beta):
        sq = np.sum(group_view(beta) ** 2, axis=1)
        return np.concatenate([sq - u[:m], [float(np.sum(np.abs(beta))) - u[m]]])

    def constraint_vjp(u, beta, lam):
        g_beta = 2.0 * np.repeat(lam[:m], group_size) * beta + lam[m] * np.sign(beta)
        return -lam, g_beta

    problem = BilevelProblem(
        dim_x=m + 1, dim_y=p, dim_p=m + 1,
        upper_value=upper_value, upper_grad=upper_grad,
        lower_value=lower_value, lower_grad=lower_grad,
        constraint_value=constraint_value, constraint_vjp=constraint_vjp,
        set_x=ProjectableSet.nonnegative(), set_y=ProjectableSet.full_space(),
    )
    return problem, data


def _sgl_prox(beta: np.ndarray, t: float, weight: float, m: int, group_size: int) -> np.ndarray:
    """Exact prox of t * weight * (sum of group l2 norms + l1 norm):
    soft-threshold, then group soft-threshold."""
    shrunk = np.sign(beta) * np.maximum(np.abs(beta) - t * weight, 0.0)
    groups = shrunk.reshape(m, group_size)
    norms = np.linalg.norm(groups, axis=1)
    scale = np.where(norms > 0.0, np.maximum(0.0, 1.0 - t * weight / np.maximum(norms, 1e-300)), 0.0)
    return (groups * scale[:, None]).ravel()


def sgl_warm_start(data: DataSplit, m_groups: int, weight: float = 0.1,
                   iters: int = 4000) -> tuple[np.ndarray, np.ndarray]:
    """Warm start (u0, beta0) from the single-level sparse group lasso.

    Solves the training problem with all regularization weights equal to
    `weight` by proximal gradient, then sets u_m to the squared group norms
    and u_{M+1} to the l1 norm of the solution.
    """
    p = data.a_train.shape[1]
    group_size = p // m_groups
    gram = data.a_train.T @ data.a_train
    rhs = data.a_train.T @ data.b_train
    step = 1.0 / max(float(np.linalg.eigvalsh(gram)[-1]), 1e-12)
    beta = np.zeros(p)
    for _ in range(iters):
        beta = _sgl_prox(beta - step * (gram @ beta - rhs), step, weight, m_groups, group_size)
    sq = np.sum(beta.reshape(m_groups, group_size) ** 2, axis=1)
    u = np.concatenate([sq, [float(np.sum(np.abs(beta)))]])
    return u, beta


def dump_sgl_csv(data: DataSplit, path) -> None:
    """Write the generated dataset: feature columns, response, split label."""
    p = data.a_train.shape[1]
    header = ",".join([f"f{i}" for i in range(p)] + ["response", "split"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for label, a, b in (("train", data.a_train, data.b_train),
                            ("val", data.a_val, data.b_val),
                            ("test", data.a_test, data.b_test)):
            for row, resp in zip(a, b):
                fh.write(",".join(repr(float(v)) for v in row) + f",{resp!r},{label}\n")


def make_toy_minimax(n: int) -> MinimaxBilevelProblem:
    """Strongly convex-concave toy with closed-form saddle.

    F = |x - y|^2/2 + |z|^2/2 and f = y.z + |y - x|^2/2 - |z - x|^2/2. The
    saddle of f at a given x is (y, z) = (0, x), so the constrained optimum is
    the origin. Z is a generous box so projections stay exercised.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")

    def upper_value(x, y, z):
        d = x - y
        return 0.5 * float(d @ d) + 0.5 * float(z @ z)

    def upper_grad(x, y, z):
        return x - y, y - x, z.copy()

    def lower_value(x, y, z):
        dy = y - x
        dz = z - x
        return float(y @ z) + 0.5 * float(dy @ dy) - 0.5 * float(dz @ dz)

    def lower_grad(x, y, z):
        return z - y, z + y - x, y - z + x

    zeros = np.zeros(n)
    return MinimaxBilevelProblem(
        dim_x=n, dim_y=n, dim_z=n,
        upper_value=upper_value, upper_grad=upper_grad,
        lower_value=lower_value, lower_grad=lower_grad,
        set_x=ProjectableSet.full_space(), set_y=ProjectableSet.full_space(),
        set_z=ProjectableSet.box(-10.0, 10.0),
        reference_solution=(zeros.copy(), zeros.copy(), zeros.copy()),
    )


def toy_minimax_saddle(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form saddle (y, z) = (0, x) of the toy's lower level."""
    x = np.asarray(x, dtype=np.float64)
    return np.zeros_like(x), x.copy()
