"""Discounted LQR: Riccati fixed point, closed-loop diagnostics, critical discount factors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import LinearQuadraticProblem, check_discount

log = logging.getLogger(__name__)

BRACKET = (0.01, 0.999)
BISECTION_TOL = 5e-5
BISECTION_MAX_ITER = 60
# strict margin so a closed loop sitting on the unit circle is not called stable
STABILITY_MARGIN = 1e-9


class RiccatiDivergenceError(RuntimeError):
    pass


class BracketingError(ValueError):
    pass


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int
    gamma: float


@dataclass(frozen=True)
class ThresholdResult:
    gamma_critical: float
    bracket: tuple[float, float]
    criterion: str
    # True when the criterion already holds at the lower end of the search bracket
    at_floor: bool = False


def riccati_map(P, A, B, Q, R, gamma):
    """One application of the discounted Bellman operator to ``V(x) = x'Px``."""
    BtPA = B.T @ P @ A
    S = R + gamma * B.T @ P @ B
    out = Q + gamma * A.T @ P @ A - gamma**2 * BtPA.T @ np.linalg.solve(S, BtPA)
    return (out + out.T) / 2


def optimal_gain(P, A, B, R, gamma):
    return -np.linalg.solve(R + gamma * B.T @ P @ B, gamma * B.T @ P @ A)


def solve_dare(problem: LinearQuadraticProblem, tol: float | None = None, max_iter: int = 100_000) -> RiccatiSolution:
    """Solve the discounted Riccati equation by fixed-point iteration from ``P0 = Q``.

    The discounted problem is the undiscounted one for ``(sqrt(gamma) A, sqrt(gamma) B)``;
    iteration converges whenever that pair is stabilizable and detectable.
    """
    A, B, Q, R, g = problem.A, problem.B, problem.Q, problem.R, problem.gamma
    if tol is None:
        tol = 1e-12 * max(1.0, np.abs(Q).max())
    P = Q.copy()
    for it in range(1, max_iter + 1):
        P_next = riccati_map(P, A, B, Q, R, g)
        step = np.abs(P_next - P).max()
        P = P_next
        if not np.all(np.isfinite(P)) or np.abs(P).max() > 1e14:
            raise RiccatiDivergenceError(f"Riccati iteration diverged at gamma={g} after {it} iterations")
        if step <= tol:
            break
    else:
        raise RiccatiDivergenceError(f"no convergence at gamma={g} after {max_iter} iterations (last step {step:.3e})")
    residual = np.abs(P - riccati_map(P, A, B, Q, R, g)).max()
    K = optimal_gain(P, A, B, R, g)
    P.setflags(write=False)
    K.setflags(write=False)
    return RiccatiSolution(P=P, K=K, residual=float(residual), iterations=it, gamma=g)


def closed_loop_matrix(problem: LinearQuadraticProblem, K) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, float))
    if K.shape != (problem.m, problem.n):
        raise ValueError(f"gain must have shape {(problem.m, problem.n)}, got {K.shape}")
    return problem.A + problem.B @ K


def spectral_radius(M) -> float:
    # LAPACK's Hessenberg QR iteration; matrices here are tiny
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def bisect_threshold(
    criterion: Callable[[float], bool],
    name: str,
    bracket: tuple[float, float] = BRACKET,
    tol: float = BISECTION_TOL,
    max_iter: int = BISECTION_MAX_ITER,
) -> ThresholdResult:
    """Smallest gamma in ``bracket`` at which a monotone ``criterion`` holds."""
    lo, hi = bracket
    if not criterion(hi):
        raise BracketingError(f"{name} criterion fails at the upper bracket end gamma={hi}")
    if criterion(lo):
        return ThresholdResult(lo, (lo, lo), name, at_floor=True)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if criterion(mid):
            hi = mid
        else:
            lo = mid
    log.debug("%s threshold bracket [%g, %g]", name, lo, hi)
    return ThresholdResult(hi, (lo, hi), name)


def is_stabilizing(problem: LinearQuadraticProblem) -> bool:
    sol = solve_dare(problem)
    return spectral_radius(closed_loop_matrix(problem, sol.K)) < 1.0 - STABILITY_MARGIN


def value_is_lyapunov(problem: LinearQuadraticProblem) -> bool:
    """``x'Px`` strictly decreases along the optimal closed loop."""
    sol = solve_dare(problem)
    M = closed_loop_matrix(problem, sol.K)
    D = sol.P - M.T @ sol.P @ M
    return np.linalg.eigvalsh((D + D.T) / 2)[0] > 0.0


def gaitsgory_constant(problem: LinearQuadraticProblem) -> float:
    """Smallest ``C >= 1`` with ``x'Px <= C inf_u L(x, u) = C x'Qx`` (needs ``Q > 0``)."""
    w, U = np.linalg.eigh(problem.Q)
    if w[0] <= 0:
        raise ValueError("the constant is only defined for positive definite Q")
    Qih = U @ np.diag(w**-0.5) @ U.T
    P = solve_dare(problem).P
    return max(1.0, float(np.linalg.eigvalsh(Qih @ P @ Qih)[-1]))


def gaitsgory_feasible(problem: LinearQuadraticProblem) -> bool:
    return gaitsgory_constant(problem) < 1.0 / (1.0 - problem.gamma)


def _threshold(template, predicate, name, tol, bracket):
    check_discount(bracket[1])
    return bisect_threshold(lambda g: predicate(template.with_gamma(g)), name, bracket, tol)


def stabilizing_threshold(template: LinearQuadraticProblem, tol: float = BISECTION_TOL, bracket=BRACKET) -> ThresholdResult:
    return _threshold(template, is_stabilizing, "stabilizing", tol, bracket)


def lyapunov_threshold(template: LinearQuadraticProblem, tol: float = BISECTION_TOL, bracket=BRACKET) -> ThresholdResult:
    return _threshold(template, value_is_lyapunov, "lyapunov", tol, bracket)


def gaitsgory_c_threshold(template: LinearQuadraticProblem, tol: float = BISECTION_TOL, bracket=BRACKET) -> ThresholdResult:
    return _threshold(template, gaitsgory_feasible, "gaitsgory_c", tol, bracket)
