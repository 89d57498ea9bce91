"""Analysis tools for discounted economic MPC problems."""

__version__ = "0.1.0"

from .model import (
    LinearQuadraticProblem,
    ProblemError,
    ScalarFamily,
    ScalarGridProblem,
    load_problem,
    lqr_example,
    nonlinear_example,
    problem_from_config,
)
from .lqr import RiccatiSolution, solve_dare
from .certificate import QuadraticStorage, synthesize_certificate, verify_certificate
from .dp import GridPolicy, GridValueFunction, value_iteration
from .steady_state import SteadyState, solve_optimal_steady_state, sweep_gamma
from .dissipativity import StorageFunction, analyze_grid, check_sdsd_on_grid
from .sim import simulate, convergence_metrics

__all__ = [
    "__version__",
    "LinearQuadraticProblem",
    "ProblemError",
    "ScalarFamily",
    "ScalarGridProblem",
    "load_problem",
    "lqr_example",
    "nonlinear_example",
    "problem_from_config",
    "RiccatiSolution",
    "solve_dare",
    "QuadraticStorage",
    "synthesize_certificate",
    "verify_certificate",
    "GridPolicy",
    "GridValueFunction",
    "value_iteration",
    "SteadyState",
    "solve_optimal_steady_state",
    "sweep_gamma",
    "StorageFunction",
    "analyze_grid",
    "check_sdsd_on_grid",
    "simulate",
    "convergence_metrics",
]
