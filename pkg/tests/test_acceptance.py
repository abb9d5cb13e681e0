"""Acceptance suite: every shipped claim, at its stated tolerance.

Each test prints one PASS/FAIL line (run pytest with -s to see them inline).
The heavy convergence runs use the experiment-protocol hyperparameters; the
multiplier cap r = 2 and penalty base c = 1 are the library defaults for the
synthetic family.
"""

import time

import numpy as np
import pytest

import bigap.solver as S
from bigap import bench, gapfn, oracle
from bigap.minimax import run_minimax, saddle_gap_gradient, saddle_gap_value
from bigap.solver import (
    IterState,
    LipschitzEstimates,
    SolverConfig,
    directions,
    penalty_at,
    run,
    step_lambda,
    step_primal,
    step_theta,
)
from conftest import QuadraticInstance


def _report(number: int, label: str):
    class _Ctx:
        def __enter__(self):
            self.t0 = time.monotonic()
            return self

        def __exit__(self, exc_type, exc, tb):
            verdict = "PASS" if exc_type is None else "FAIL"
            print(f"ACCEPTANCE {number:2d} [{label}]: {verdict} "
                  f"({time.monotonic() - self.t0:.1f}s)")
            return False

    return _Ctx()


def test_criterion_01_synthetic_convergence_q1():
    with _report(1, "synthetic q=1 n=1000 reaches 1% in budget"):
        prob = bench.make_synthetic(bench.SyntheticSpec(n=1000, q=1))
        cfg = SolverConfig(alpha=1e-3, eta=1e-2, penalty_c=1.0, penalty_rho=0.3,
                           gap_params=gapfn.GapParams(gamma1=1.0, gamma2=0.1, r=2.0),
                           max_iters=200_000, diag_every=0, stop_ref_rel_err=0.01)
        trace = run(prob, cfg, start=bench.synthetic_start(1000))
        assert trace.status == S.STATUS_REFERENCE
        assert trace.final.ref_rel_err < 0.01
        assert trace.final.k <= 200_000


def test_criterion_02_synthetic_convergence_q3_with_sweep():
    with _report(2, "synthetic q=3 n=100 and all gamma1 sweep cells reach 1%"):
        for gamma1 in (10.0, 7.0, 5.0, 3.0, 1.0):
            prob = bench.make_synthetic(bench.SyntheticSpec(n=100, q=3))
            cfg = SolverConfig(alpha=1e-3, eta=1e-2, penalty_c=1.0, penalty_rho=0.3,
                               gap_params=gapfn.GapParams(gamma1=gamma1, gamma2=1.0, r=2.0),
                               max_iters=200_000, diag_every=0, stop_ref_rel_err=0.01)
            trace = run(prob, cfg, start=bench.synthetic_start(100))
            assert trace.status == S.STATUS_REFERENCE, f"gamma1={gamma1} missed 1%"
            assert trace.final.k <= 200_000


def test_criterion_03_gap_gradient_finite_difference():
    with _report(3, "gap gradient vs central differences, 100 points, 1e-5"):
        inst = QuadraticInstance(seed=0)
        params = gapfn.GapParams(gamma1=1.0, gamma2=1.0, r=2.0, inner_tol=1e-10)
        cfg = oracle.OracleConfig(fd_step=1e-6)
        rng = np.random.default_rng(123)
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            z = np.abs(rng.standard_normal(3)) + 0.05
            gx, gy, gz, _ = gapfn.gap_gradient(inst.problem, params, x, y, z)
            analytic = np.concatenate([gx, gy, gz])
            point = np.concatenate([x, y, z])

            def gap_at(v):
                return gapfn.gap_value(inst.problem, params, v[:5], v[5:10], v[10:]).value

            fd = oracle.finite_diff_grad(gap_at, point, cfg)
            worst = max(worst, float(np.max(np.abs(analytic - fd))
                                     / (1.0 + np.max(np.abs(fd)))))
        assert worst <= 1e-5, f"max relative error {worst:.3e}"


def test_criterion_04_gap_sign_and_kkt_characterization():
    with _report(4, "gap nonnegative, zero at KKT, bounded away when displaced"):
        inst = QuadraticInstance(seed=0)
        params = gapfn.GapParams(gamma1=1.0, gamma2=1.0, r=2.0, inner_tol=1e-10)
        rng = np.random.default_rng(321)
        for _ in range(1000):
            x = rng.standard_normal(5)
            y = rng.standard_normal(5)
            z = 2.0 * rng.random(3)
            assert gapfn.gap_value(inst.problem, params, x, y, z).value >= -1e-9

        x0, y0, z0 = inst.kkt_triple()
        assert abs(gapfn.gap_value(inst.problem, params, x0, y0, z0).value) <= 1e-8

        for _ in range(5):
            d = rng.standard_normal(5)
            d *= 0.1 / np.linalg.norm(d)
            assert gapfn.gap_value(inst.problem, params, x0, y0 + d, z0).value >= 1e-4
        dz = np.zeros(3)
        dz[1] = 0.1  # perturb the inactive multiplier
        assert gapfn.gap_value(inst.problem, params, x0, y0, z0 + dz).value >= 1e-4


def test_criterion_05_single_step_contraction():
    with _report(5, "theta step contraction at every diagnostic iteration"):
        inst = QuadraticInstance(seed=4)
        r_cap = 2.0
        gamma1 = 1.0
        params = gapfn.GapParams(gamma1=gamma1, gamma2=1.0, r=r_cap, inner_tol=1e-12)
        eta = 0.9 / (inst.inner_smoothness(r_cap) + 1.0 / gamma1)
        cfg = SolverConfig(alpha=1e-3, eta=eta, penalty_c=1.0, penalty_rho=0.0,
                           gap_params=params, max_iters=1, diag_every=0)
        rng = np.random.default_rng(10)
        state = S._prepare_start(inst.problem, params,
                                 (rng.standard_normal(5), rng.standard_normal(5),
                                  2.0 * rng.random(3), rng.standard_normal(5)))
        ocfg = oracle.OracleConfig(high_acc_tol=1e-12)
        checks = 0
        for k in range(10_000):
            diag = k % 100 == 0
            if diag:
                th_star, ok = oracle.solve_inner_highacc(
                    inst.problem, params, state.x, state.y, state.z, ocfg)
                assert ok
                before = float(np.linalg.norm(state.theta - th_star)) ** 2
            theta_next = step_theta(inst.problem, params, cfg, state)
            if diag:
                after = float(np.linalg.norm(theta_next - th_star)) ** 2
                assert after <= (1.0 - eta / gamma1) * before + 1e-9
                checks += 1
            lam_next = step_lambda(inst.problem, params, state)
            dx, dy, dz = directions(inst.problem, params, cfg, state, theta_next,
                                    lam_next, penalty_at(cfg, k))
            x, y, z = step_primal(inst.problem, cfg, state, dx, dy, dz)
            state = IterState(k + 1, x, y, z, theta_next, lam_next)
        assert checks == 100


def test_criterion_06_merit_descent():
    with _report(6, "merit nonincreasing on the diagnostic schedule"):
        n = 10
        prob = bench.make_synthetic(bench.SyntheticSpec(n=n, q=1))
        lips = LipschitzEstimates(l_f=(1.0 + np.sqrt(5.0)) / 2.0, l_g1=0.0,
                                  l_g=np.sqrt(6.0 * n), f_lower=0.0)
        cfg = SolverConfig(alpha=1e-4, eta=1e-3, penalty_c=1.0, penalty_rho=0.0,
                           gap_params=gapfn.GapParams(gamma1=1.0, gamma2=0.1, r=2.0),
                           max_iters=50_000, diag_every=100, stop_ref_rel_err=None,
                           lipschitz=lips)
        trace = run(prob, cfg, start=bench.synthetic_start(n))
        merits = [row.merit_V for row in trace.rows if row.merit_V is not None]
        assert len(merits) == 501
        for earlier, later in zip(merits, merits[1:]):
            assert later <= earlier + 1e-8


def test_criterion_07_rate_sanity_and_gap_trend():
    with _report(7, "residual decay sanity and diagnostic gap trend"):
        prob = bench.make_synthetic(bench.SyntheticSpec(n=100, q=1))
        cfg = SolverConfig(alpha=2e-3, eta=1e-2, penalty_c=1.0, penalty_rho=0.3,
                           gap_params=gapfn.GapParams(gamma1=1.0, gamma2=0.1, r=2.0),
                           max_iters=100_000, diag_every=100, stop_ref_rel_err=None)
        trace = run(prob, cfg, start=bench.synthetic_start(100))
        sampled = [(row.k, row.res_exact) for row in trace.rows
                   if row.res_exact is not None]
        ks = np.array([k for k, _ in sampled])
        res = np.array([v for _, v in sampled])

        checkpoints = [6_250, 12_500, 25_000, 50_000, 100_000]
        mins = [res[ks <= K].min() for K in checkpoints]
        for earlier, later in zip(mins, mins[1:]):
            assert later <= earlier
        assert mins[-1] <= mins[0]  # K = 16 K0 vs K0
        assert mins[-1] <= 1e-2, f"min residual {mins[-1]:.3e}"

        gaps = [(row.k, row.gap_exact) for row in trace.rows
                if row.gap_exact is not None and row.k > 10_000]
        gk = np.array([k for k, _ in gaps], dtype=float)
        gv = np.array([v for _, v in gaps])
        assert np.all(np.isfinite(gv))  # observed boundedness, Theorem tail hypothesis
        slope = np.polyfit(gk, gv, 1)[0]
        assert slope <= 0.0, f"gap trend slope {slope:.3e}"


def test_criterion_08_oracle_cross_validation():
    with _report(8, "inner-solve and multiplier oracles cross-validate"):
        for seed in range(50):
            inst = QuadraticInstance(seed=seed, n=4, m=4, p=2)
            params = gapfn.GapParams(gamma1=1.0, gamma2=1.0, r=2.0, inner_tol=1e-12)
            rng = np.random.default_rng(1000 + seed)
            x = rng.standard_normal(4)
            y = rng.standard_normal(4)
            z = 2.0 * rng.random(2)
            fast, _, ok1 = gapfn.theta_star(inst.problem, params, x, y, z)
            slow, ok2 = oracle.solve_inner_highacc(
                inst.problem, params, x, y, z, oracle.OracleConfig(high_acc_tol=1e-12))
            assert ok1 and ok2
            assert np.linalg.norm(fast - slow) <= 1e-8

        rng = np.random.default_rng(77)
        for _ in range(50):
            g_val = float(rng.normal())
            z_val = float(2.0 * rng.random())
            gamma2 = float(0.2 + 2.0 * rng.random())

            def dual_objective(lam):
                return lam * g_val - (lam - z_val) ** 2 / (2.0 * gamma2)

            from conftest import scalar_constraint_problem

            prob = scalar_constraint_problem(g_val)
            params = gapfn.GapParams(gamma1=1.0, gamma2=gamma2, r=10.0)
            lam = float(gapfn.lambda_star(prob, params, np.zeros(1), np.zeros(1),
                                          np.array([z_val]))[0])
            # coarse global certificate: the closed form attains the grid max
            _, coarse_val = oracle.grid_argmax_concave_1d(dual_objective, 0.0, 10.0)
            assert dual_objective(lam) >= coarse_val - 1e-12
            assert dual_objective(lam) - coarse_val <= 1e-6
            # fine local grid pins the maximizer's position
            fine_arg, _ = oracle.grid_argmax_concave_1d(
                dual_objective, max(0.0, lam - 0.05), lam + 0.05,
                oracle.OracleConfig(grid_points=10_001))
            assert abs(fine_arg - lam) <= 1e-6


def test_criterion_09_sgl_improvement_and_feasibility():
    with _report(9, "sparse group lasso improves validation error, ends feasible"):
        spec = bench.SglSpec(p=150, m_groups=30, n_tr=100, n_val=100, n_test=300,
                             snr=3.0, seed=7)
        problem, data = bench.make_sgl(spec)
        u0, beta0 = bench.sgl_warm_start(data, spec.m_groups)
        warm_val = problem.upper_value(u0, beta0)

        cfg = SolverConfig(alpha=0.01, eta=0.1, penalty_c=1.0, penalty_rho=0.3,
                           gap_params=gapfn.GapParams(gamma1=10.0, gamma2=1.0, r=10.0),
                           max_iters=30_000, diag_every=0, stop_ref_rel_err=None)
        phase1 = run(problem, cfg, start=(u0, beta0, np.zeros(spec.m_groups + 1)))
        assert phase1.status == S.STATUS_MAX_ITERS

        # penalty continuation: polish lower-level optimality until the
        # iterate is feasible to tolerance, then stop
        params = gapfn.GapParams(gamma1=1.0, gamma2=1.0, r=10.0)
        polish = SolverConfig(alpha=0.01, eta=0.1, penalty_c=1e6, penalty_rho=0.0,
                              gap_params=params, max_iters=1, diag_every=0)
        s1 = phase1.final_state
        state = S._prepare_start(problem, params, (s1.x, s1.y, s1.z, s1.theta))
        feasible = False
        for k in range(150_000):
            theta_next = step_theta(problem, params, polish, state)
            lam_next = step_lambda(problem, params, state)
            dx, dy, dz = directions(problem, params, polish, state, theta_next,
                                    lam_next, 1e6)
            x, y, z = step_primal(problem, polish, state, dx, dy, dz)
            state = IterState(k + 1, x, y, z, theta_next, lam_next)
            if float(np.max(problem.constraint_value(state.x, state.y))) <= 1e-6:
                feasible = True
                break
        assert feasible, "polish never reached 1e-6 feasibility"
        final_val = problem.upper_value(state.x, state.y)
        assert final_val < warm_val
        assert float(np.max(problem.constraint_value(state.x, state.y))) <= 1e-6


def test_criterion_10_minimax_extension():
    with _report(10, "minimax toy converges; saddle gradient matches differences"):
        prob = bench.make_toy_minimax(5)
        cfg = SolverConfig(alpha=0.05, eta=0.1, penalty_c=1.0, penalty_rho=0.3,
                           gap_params=gapfn.GapParams(gamma1=1.0, gamma2=1.0, r=10.0),
                           max_iters=100_000, diag_every=0, stop_ref_rel_err=1e-3)
        trace = run_minimax(prob, cfg, start=(np.ones(5), np.ones(5), np.ones(5)))
        assert trace.status == S.STATUS_REFERENCE
        assert trace.final.ref_rel_err <= 1e-3
        assert trace.final.k <= 100_000

        params = gapfn.GapParams(gamma1=1.0, gamma2=1.0, inner_tol=1e-10)
        fd_cfg = oracle.OracleConfig(fd_step=1e-6)
        rng = np.random.default_rng(55)
        worst = 0.0
        for _ in range(100):
            x, y, z = (rng.standard_normal(5) for _ in range(3))
            gx, gy, gz, _ = saddle_gap_gradient(prob, params, x, y, z)
            analytic = np.concatenate([gx, gy, gz])
            point = np.concatenate([x, y, z])

            def gap_at(v):
                return saddle_gap_value(prob, params, v[:5], v[5:10], v[10:]).value

            fd = oracle.finite_diff_grad(gap_at, point, fd_cfg)
            worst = max(worst, float(np.max(np.abs(analytic - fd))
                                     / (1.0 + np.max(np.abs(fd)))))
        assert worst <= 1e-5, f"max relative error {worst:.3e}"


def test_criterion_11_determinism():
    with _report(11, "identical config and seed give identical traces"):
        def one_run():
            prob = bench.make_synthetic(bench.SyntheticSpec(n=50, q=1))
            cfg = SolverConfig(alpha=1e-3, eta=1e-2, penalty_c=1.0, penalty_rho=0.3,
                               gap_params=gapfn.GapParams(gamma1=1.0, gamma2=0.1, r=2.0),
                               max_iters=2_000, diag_every=500, stop_ref_rel_err=None,
                               seed=3)
            return run(prob, cfg, start=bench.synthetic_start(50))

        t1 = one_run()
        t2 = one_run()
        assert t1.status == t2.status
        assert len(t1.rows) == len(t2.rows)
        time_idx = S.TRACE_COLUMNS.index("time_s")
        for r1, r2 in zip(t1.rows, t2.rows):
            for i, (a, b) in enumerate(zip(r1, r2)):
                if i == time_idx:
                    continue
                assert a == b, f"row {r1.k} column {S.TRACE_COLUMNS[i]} differs"
