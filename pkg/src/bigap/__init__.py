"""First-order solver library for constrained bilevel optimization.

The lower-level problem is folded into a single smooth quantity, a doubly
regularized Lagrangian gap function, and the penalized reformulation is
solved by a single-loop, Hessian-free projected gradient method. A minimax
lower-level variant, reference oracles, and reproducible synthetic benchmarks
are included.
"""

from .bench import (
    DataSplit,
    SglSpec,
    SyntheticSpec,
    generate_sgl_data,
    make_sgl,
    make_synthetic,
    make_toy_minimax,
    sgl_warm_start,
    synthetic_start,
)
from .gapfn import GapEvaluation, GapParams, gap_gradient, gap_value, lambda_star, theta_star
from .minimax import (
    MinimaxBilevelProblem,
    run_minimax,
    saddle_gap_gradient,
    saddle_gap_value,
)
from .oracle import (
    OracleConfig,
    finite_diff_grad,
    grid_argmax_concave_1d,
    least_squares,
    solve_inner_highacc,
)
from .problem import (
    BilevelProblem,
    ConfigurationError,
    EvaluationError,
    ProjectableSet,
    ValidationReport,
    project,
    validate_gradients,
)
from .solver import (
    IterState,
    LipschitzEstimates,
    RunTrace,
    SolverConfig,
    TraceRow,
    directions,
    merit_value,
    penalty_at,
    residual,
    run,
    step_lambda,
    step_primal,
    step_theta,
)

__version__ = "0.1.0"

__all__ = [
    "BilevelProblem", "ConfigurationError", "DataSplit", "EvaluationError",
    "GapEvaluation", "GapParams", "IterState", "LipschitzEstimates",
    "MinimaxBilevelProblem", "OracleConfig", "ProjectableSet", "RunTrace",
    "SglSpec", "SolverConfig", "SyntheticSpec", "TraceRow", "ValidationReport",
    "directions", "finite_diff_grad", "gap_gradient", "gap_value",
    "generate_sgl_data", "grid_argmax_concave_1d", "lambda_star",
    "least_squares", "make_sgl", "make_synthetic", "make_toy_minimax",
    "merit_value", "penalty_at", "project", "residual", "run", "run_minimax",
    "saddle_gap_gradient", "saddle_gap_value", "sgl_warm_start",
    "solve_inner_highacc", "step_lambda", "step_primal", "step_theta",
    "synthetic_start", "theta_star", "validate_gradients",
]
