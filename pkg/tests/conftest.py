"""Shared test instances.

The workhorse is a random smooth quadratic family: lower objective
0.5 y'Qy + x'By + c'y + 0.5|x|^2 with Q positive definite, and constraints
g_j = 0.5 y'P_j y + (C_j x + e_j)'y + r_j'x + s_j with P_j positive
semidefinite, so everything is convex in y. The linear term c and the
offsets s_j are reverse-engineered so a chosen triple (x, y, z) is a
lower-level KKT point with its chosen active set.
"""

import numpy as np
import pytest

from bigap.problem import BilevelProblem, ProjectableSet


class QuadraticInstance:
    def __init__(self, seed=0, n=5, m=5, p=3, active=(0,), z_active=0.7,
                 curvature=0.3):
        rng = np.random.default_rng(seed)
        self.n, self.m, self.p = n, m, p
        g_mat = rng.standard_normal((m, m))
        self.Q = np.eye(m) + g_mat @ g_mat.T / m
        self.B = curvature * rng.standard_normal((n, m))
        self.P = np.empty((p, m, m))
        for j in range(p):
            d = rng.standard_normal((m, m))
            self.P[j] = curvature * (d @ d.T) / m
        self.C = curvature * rng.standard_normal((p, m, n))
        self.e = curvature * rng.standard_normal((p, m))
        self.r_lin = curvature * rng.standard_normal((p, n))

        self.x_bar = 0.5 * rng.standard_normal(n)
        self.y_bar = 0.5 * rng.standard_normal(m)
        self.z_bar = np.zeros(p)
        for j in active:
            self.z_bar[j] = z_active
        grad_g_y = self.P @ self.y_bar + self.C @ self.x_bar + self.e  # (p, m)
        self.c_lin = -(self.Q @ self.y_bar + self.B.T @ self.x_bar) \
            - grad_g_y.T @ self.z_bar
        vals = np.array([
            0.5 * self.y_bar @ self.P[j] @ self.y_bar
            + (self.C[j] @ self.x_bar + self.e[j]) @ self.y_bar
            + self.r_lin[j] @ self.x_bar
            for j in range(p)
        ])
        self.s_off = -vals - np.array([0.0 if j in active else 1.0 for j in range(p)])
        self.active = tuple(active)

        self.problem = BilevelProblem(
            dim_x=n, dim_y=m, dim_p=p,
            upper_value=self.upper_value, upper_grad=self.upper_grad,
            lower_value=self.lower_value, lower_grad=self.lower_grad,
            constraint_value=self.constraint_value, constraint_vjp=self.constraint_vjp,
            set_x=ProjectableSet.full_space(), set_y=ProjectableSet.full_space(),
        )

    # upper objective centred at the KKT triple so its gradient vanishes there
    def upper_value(self, x, y):
        dx = x - self.x_bar
        dy = y - self.y_bar
        return 0.5 * float(dx @ dx) + 0.5 * float(dy @ dy)

    def upper_grad(self, x, y):
        return x - self.x_bar, y - self.y_bar

    def lower_value(self, x, y):
        return (0.5 * float(y @ self.Q @ y) + float(x @ self.B @ y)
                + float(self.c_lin @ y) + 0.5 * float(x @ x))

    def lower_grad(self, x, y):
        return self.B @ y + x, self.Q @ y + self.B.T @ x + self.c_lin

    def constraint_value(self, x, y):
        return (0.5 * np.einsum("m,jmk,k->j", y, self.P, y)
                + (self.C @ x + self.e) @ y + self.r_lin @ x + self.s_off)

    def constraint_vjp(self, x, y, lam):
        grad_y = self.P @ y + self.C @ x + self.e  # (p, m)
        grad_x = np.einsum("jmk,m->jk", self.C, y) + self.r_lin  # (p, n)
        return lam @ grad_x, lam @ grad_y

    def kkt_triple(self):
        return self.x_bar.copy(), self.y_bar.copy(), self.z_bar.copy()

    def inner_smoothness(self, r_cap: float) -> float:
        """Upper bound on the curvature of f + z.g in y over z in [0, r]^p."""
        top = float(np.linalg.eigvalsh(self.Q)[-1])
        top += r_cap * sum(float(np.linalg.eigvalsh(self.P[j])[-1]) for j in range(self.p))
        return top

    def f_smoothness(self) -> float:
        m, n = self.m, self.n
        hess = np.zeros((n + m, n + m))
        hess[:n, :n] = np.eye(n)
        hess[:n, n:] = self.B
        hess[n:, :n] = self.B.T
        hess[n:, n:] = self.Q
        return float(np.abs(np.linalg.eigvalsh(hess)).max())


@pytest.fixture
def quad_instance():
    return QuadraticInstance(seed=0)


def simple_inner_problem():
    """f = |y|^2 / 2 with one constraint identically zero (dim_p = 1)."""
    return BilevelProblem(
        dim_x=1, dim_y=1, dim_p=1,
        upper_value=lambda x, y: 0.0,
        upper_grad=lambda x, y: (np.zeros(1), np.zeros(1)),
        lower_value=lambda x, y: 0.5 * float(y @ y),
        lower_grad=lambda x, y: (np.zeros(1), y.copy()),
        constraint_value=lambda x, y: np.zeros(1),
        constraint_vjp=lambda x, y, lam: (np.zeros(1), np.zeros(1)),
    )


def unconstrained_quadratic(center=0.0):
    """f = |y - center|^2 / 2, no constraints."""
    return BilevelProblem(
        dim_x=1, dim_y=1, dim_p=0,
        upper_value=lambda x, y: 0.0,
        upper_grad=lambda x, y: (np.zeros(1), np.zeros(1)),
        lower_value=lambda x, y: 0.5 * float((y - center) @ (y - center)),
        lower_grad=lambda x, y: (np.zeros(1), y - center),
    )


def scalar_constraint_problem(g_value: float):
    """Constant scalar constraint g(x, y) = g_value, trivial objectives."""
    return BilevelProblem(
        dim_x=1, dim_y=1, dim_p=1,
        upper_value=lambda x, y: 0.0,
        upper_grad=lambda x, y: (np.zeros(1), np.zeros(1)),
        lower_value=lambda x, y: 0.0,
        lower_grad=lambda x, y: (np.zeros(1), np.zeros(1)),
        constraint_value=lambda x, y: np.array([g_value]),
        constraint_vjp=lambda x, y, lam: (np.zeros(1), np.zeros(1)),
    )
