"""Command-line harness: run solvers, sweep hyperparameters, check gradients.

Subcommands:
  run       one solver run, trace written as CSV or JSON lines
  sweep     Cartesian hyperparameter sweep on a worker pool, aggregated CSV
  gradcheck finite-difference validation of problem oracles and gap gradient

Configuration comes from flat `key = value` files and/or flags; flags win.
Exit codes: 0 clean, 1 configuration error, 2 oracle failure, 3 failed check.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import bench, gapfn, oracle, solver
from .problem import ConfigurationError, validate_gradients

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ORACLE = 2
EXIT_CHECK = 3

_SWEEP_AXES = ("gamma1", "gamma2", "alpha", "eta", "rho")


@dataclass
class ExperimentConfig:
    problem: str = ""
    n: int = 100
    q: int = 1
    p: int = 150
    m_groups: int = 30
    n_tr: int = 100
    n_val: int = 100
    n_test: int = 300
    snr: float = 3.0
    gamma1: float = 1.0
    gamma2: float = 0.1
    alpha: float = 1e-3
    eta: float = 1e-2
    rho: float = 0.3
    c: float = 1.0
    r_cap: float = 10.0
    inner_tol: float = 1e-10
    max_iters: int = 200_000
    diag_every: int = 100
    seed: int = 0
    out: str = ""
    format: str = "csv"
    stop_ref_rel_err: Optional[float] = 0.01
    stop_residual: Optional[float] = None
    threads: Optional[int] = None
    sweep: dict[str, list[float]] = field(default_factory=dict)

    def solver_config(self, **overrides) -> solver.SolverConfig:
        params = gapfn.GapParams(
            gamma1=overrides.get("gamma1", self.gamma1),
            gamma2=overrides.get("gamma2", self.gamma2),
            r=self.r_cap, inner_tol=self.inner_tol,
        )
        return solver.SolverConfig(
            alpha=overrides.get("alpha", self.alpha),
            eta=overrides.get("eta", self.eta),
            penalty_c=self.c,
            penalty_rho=overrides.get("rho", self.rho),
            gap_params=params,
            max_iters=self.max_iters,
            diag_every=self.diag_every,
            stop_residual=self.stop_residual,
            stop_ref_rel_err=self.stop_ref_rel_err,
            seed=self.seed,
        )


def _build_problem(cfg: ExperimentConfig):
    """Problem instance plus its canonical start for the selector."""
    if cfg.problem == "synthetic":
        problem = bench.make_synthetic(bench.SyntheticSpec(n=cfg.n, q=cfg.q))
        return problem, bench.synthetic_start(cfg.n), False
    if cfg.problem == "sgl":
        spec = bench.SglSpec(p=cfg.p, m_groups=cfg.m_groups, n_tr=cfg.n_tr,
                             n_val=cfg.n_val, n_test=cfg.n_test, snr=cfg.snr, seed=cfg.seed)
        problem, data = bench.make_sgl(spec)
        u0, beta0 = bench.sgl_warm_start(data, cfg.m_groups)
        return problem, (u0, beta0, np.zeros(cfg.m_groups + 1)), False
    if cfg.problem == "minimax-toy":
        problem = bench.make_toy_minimax(cfg.n)
        start = (np.ones(cfg.n), np.ones(cfg.n), np.ones(cfg.n))
        return problem, start, True
    raise ConfigurationError(f"unknown problem selector: {cfg.problem!r}")


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigurationError(f"{path}:{lineno}: expected key = value")
                key, _, value = line.partition("=")
                values[key.strip().replace("-", "_")] = value.strip()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    return values


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.replace(";", ",").split(",") if part.strip()]


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(name, cast, flag_value):
        if flag_value is not None:
            return flag_value
        if name in file_values:
            return cast(file_values[name])
        return getattr(cfg, name)

    cfg.problem = pick("problem", str, getattr(args, "problem", None))
    for name, cast in (("n", int), ("q", int), ("p", int), ("m_groups", int),
                       ("n_tr", int), ("n_val", int), ("n_test", int), ("snr", float),
                       ("gamma1", float), ("gamma2", float), ("alpha", float),
                       ("eta", float), ("rho", float), ("c", float), ("r_cap", float),
                       ("inner_tol", float), ("max_iters", int), ("diag_every", int),
                       ("seed", int), ("out", str), ("format", str), ("threads", int)):
        setattr(cfg, name, pick(name, cast, getattr(args, name, None)))
    for name in ("stop_ref_rel_err", "stop_residual"):
        value = pick(name, float, getattr(args, name, None))
        if isinstance(value, str):
            value = float(value)
        setattr(cfg, name, value)
    if getattr(args, "no_ref_stop", False):
        cfg.stop_ref_rel_err = None

    for axis in _SWEEP_AXES:
        key = f"sweep_{axis}"
        flag = getattr(args, key, None)
        if flag is not None:
            cfg.sweep[axis] = _float_list(flag)
        elif key in file_values:
            cfg.sweep[axis] = _float_list(file_values[key])
    if cfg.format not in ("csv", "json-lines"):
        raise ConfigurationError(f"unknown format {cfg.format!r} (use csv or json-lines)")
    if not cfg.problem:
        raise ConfigurationError("a problem selector is required (--problem)")
    return cfg


def _write_trace(trace: solver.RunTrace, cfg: ExperimentConfig) -> str:
    suffix = "csv" if cfg.format == "csv" else "jsonl"
    path = cfg.out or f"trace.{suffix}"
    if cfg.format == "csv":
        trace.to_csv(path)
    else:
        trace.to_jsonl(path)
    return path


def _execute(cfg: ExperimentConfig, **overrides) -> solver.RunTrace:
    problem, start, is_minimax = _build_problem(cfg)
    config = cfg.solver_config(**overrides)
    if is_minimax:
        from .minimax import run_minimax

        return run_minimax(problem, config, start=start)
    return solver.run(problem, config, start=start)


def cmd_run(cfg: ExperimentConfig) -> int:
    t0 = time.monotonic()
    trace = _execute(cfg)
    wall = time.monotonic() - t0
    path = _write_trace(trace, cfg)
    last = trace.final
    res = "" if last.res_proxy is None else f"{last.res_proxy:.3e}"
    ref = "" if last.ref_rel_err is None else f"{last.ref_rel_err:.3e}"
    print(f"status={trace.status} iters={last.k} res_proxy={res or 'n/a'} "
          f"ref_rel_err={ref or 'n/a'} time_s={wall:.2f} trace={path}")
    return EXIT_ORACLE if trace.status == solver.STATUS_FAILURE else EXIT_OK


def _sweep_cell(payload: tuple) -> dict:
    cfg_fields, overrides = payload
    cfg = ExperimentConfig(**cfg_fields)
    row = dict(overrides)
    try:
        t0 = time.monotonic()
        trace = _execute(cfg, **overrides)
        wall = time.monotonic() - t0
        if trace.status == solver.STATUS_REFERENCE:
            row.update(status="ok", iters_to_target=trace.final.k, time_s=wall)
        elif trace.status == solver.STATUS_FAILURE:
            row.update(status="failed", iters_to_target=None, time_s=None)
        else:
            row.update(status="target-not-met", iters_to_target=None, time_s=wall)
    except Exception:
        row.update(status="failed", iters_to_target=None, time_s=None)
    return row


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.sweep:
        raise ConfigurationError("sweep needs at least one axis (e.g. --sweep-gamma1 1,3,5)")
    axes = {axis: cfg.sweep.get(axis, [getattr(cfg, axis)]) for axis in _SWEEP_AXES}
    cells = [dict(zip(_SWEEP_AXES, combo)) for combo in itertools.product(*axes.values())]
    base_fields = {k: v for k, v in cfg.__dict__.items() if k != "sweep"}

    workers = cfg.threads or int(os.environ.get("BIGAP_THREADS", 0)) or os.cpu_count() or 1
    payloads = [(base_fields, cell) for cell in cells]
    if workers == 1 or len(cells) == 1:
        rows = [_sweep_cell(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            rows = list(pool.map(_sweep_cell, payloads))

    path = cfg.out or "sweep.csv"
    header = list(_SWEEP_AXES) + ["iters_to_target", "time_s", "status"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells_out = []
            for name in header:
                value = row.get(name)
                cells_out.append("" if value is None else
                                 (str(value) if isinstance(value, (int, str)) else repr(float(value))))
            fh.write(",".join(cells_out) + "\n")
    succeeded = sum(1 for r in rows if r["status"] == "ok")
    print(f"sweep: {succeeded}/{len(rows)} cells reached target, table={path}")
    return EXIT_OK


def gradcheck_problem(problem, seed: int = 0, samples: int = 5,
                      gamma1: float = 1.0, gamma2: float = 1.0, r: float = 5.0) -> tuple[int, str]:
    """Oracle validation plus a finite-difference check of the gap gradient.

    Returns (exit code, printable report).
    """
    report = validate_gradients(problem, samples=samples, seed=seed)
    lines = [report.summary()]
    ok = report.passed
    if not ok:
        # the gap machinery trusts the first-order oracles; differencing it
        # against them is meaningless once they are known to be wrong
        lines.append("gap_gradient_fd: skipped (oracle validation failed)")
        lines.append("gradcheck: fail")
        return EXIT_CHECK, "\n".join(lines)

    params = gapfn.GapParams(gamma1=gamma1, gamma2=gamma2, r=r, inner_tol=1e-10)
    from .rng import RandomStream

    stream = RandomStream(seed + 1)
    worst = 0.0
    for _ in range(3):
        x = problem.set_x.project(stream.normals(problem.dim_x))
        y = problem.set_y.project(stream.normals(problem.dim_y))
        z = np.abs(stream.normals(problem.dim_p)) + 0.1 if problem.dim_p else np.zeros(0)
        gx, gy, gz, _ = gapfn.gap_gradient(problem, params, x, y, z)
        point = np.concatenate([x, y, z])

        def gap_at(v):
            vx, vy, vz = v[:x.size], v[x.size:x.size + y.size], v[x.size + y.size:]
            return gapfn.gap_value(problem, params, vx, vy, vz).value

        fd = oracle.finite_diff_grad(gap_at, point, oracle.OracleConfig(fd_step=1e-6))
        analytic = np.concatenate([gx, gy, gz])
        err = float(np.max(np.abs(analytic - fd)) / (1.0 + np.max(np.abs(fd))))
        worst = max(worst, err)
    lines.append(f"gap_gradient_fd: {worst:.3e}")
    if worst > 1e-5:
        ok = False
    lines.append(f"gradcheck: {'pass' if ok else 'fail'}")
    return (EXIT_OK if ok else EXIT_CHECK), "\n".join(lines)


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    problem, _, is_minimax = _build_problem(cfg)
    if is_minimax:
        raise ConfigurationError("gradcheck supports the bilevel problem selectors")
    code, text = gradcheck_problem(problem, seed=cfg.seed,
                                   gamma1=cfg.gamma1, gamma2=max(cfg.gamma2, 1e-3), r=cfg.r_cap)
    print(text)
    return code


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key = value configuration file")
    sub.add_argument("--problem", choices=["synthetic", "sgl", "minimax-toy"])
    sub.add_argument("--n", type=int)
    sub.add_argument("--q", type=int, choices=[1, 3])
    sub.add_argument("--p", type=int)
    sub.add_argument("--m-groups", dest="m_groups", type=int)
    sub.add_argument("--n-tr", dest="n_tr", type=int)
    sub.add_argument("--n-val", dest="n_val", type=int)
    sub.add_argument("--n-test", dest="n_test", type=int)
    sub.add_argument("--snr", type=float)
    sub.add_argument("--gamma1", type=float)
    sub.add_argument("--gamma2", type=float)
    sub.add_argument("--alpha", type=float)
    sub.add_argument("--eta", type=float)
    sub.add_argument("--rho", type=float)
    sub.add_argument("--c", type=float)
    sub.add_argument("--r-cap", dest="r_cap", type=float)
    sub.add_argument("--inner-tol", dest="inner_tol", type=float)
    sub.add_argument("--max-iters", dest="max_iters", type=int)
    sub.add_argument("--diag-every", dest="diag_every", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out")
    sub.add_argument("--format", choices=["csv", "json-lines"])
    sub.add_argument("--stop-ref-rel-err", dest="stop_ref_rel_err", type=float)
    sub.add_argument("--stop-residual", dest="stop_residual", type=float)
    sub.add_argument("--no-ref-stop", dest="no_ref_stop", action="store_true",
                     help="run the full budget even when a reference solution exists")
    sub.add_argument("--threads", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bigap",
                                     description="bilevel gap-function solver harness")
    subs = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep", "gradcheck"):
        sub = subs.add_parser(name)
        _add_common_flags(sub)
        if name == "sweep":
            for axis in _SWEEP_AXES:
                sub.add_argument(f"--sweep-{axis}", dest=f"sweep_{axis}",
                                 help="comma-separated values")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = _assemble_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_gradcheck(cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
