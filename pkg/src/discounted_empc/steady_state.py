"""Discounted optimal steady states.

The optimal steady state minimises the rotated cost
``L~(x, u) = L(x, u) + (gamma - 1) V*(f(x, u))`` over fixed points
``x = f(x, u)``. For scalar problems the constraint is eliminated through the
steady input ``u_s(x)``, leaving a one-dimensional search: a dense scan
followed by golden-section refinement around the best scan point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .dp import GridValueFunction, evaluate_value, value_iteration
from .model import LinearQuadraticProblem, ScalarGridProblem

SCAN_POINTS = 20001
TIE_TOL = 1e-9
_ROOT_SCAN = 2001


class SteadyStateError(ValueError):
    pass


@dataclass(frozen=True)
class SteadyState:
    x_s: Union[float, np.ndarray]
    u_s: Union[float, np.ndarray]
    cost_tilde: float
    gamma: float
    multiple: bool = False


def _steady_input_info(problem: ScalarGridProblem, x: float) -> tuple[Optional[float], bool]:
    """Return ``(u, singular)``; ``u`` is None when no admissible input exists."""
    ul, uh = problem.u_interval
    fam = problem.family
    if fam is not None:
        if fam.a * (1.0 - x) == 0.0:
            # x is a fixed point for every input iff (1 - b) x = 0
            return (ul if (1.0 - fam.b) * x == 0.0 else None), True
        u = float(fam.steady_input(x))
        # admit round-off at the interval ends
        pad = 1e-12 * max(1.0, abs(ul), abs(uh))
        if u < ul - pad or u > uh + pad:
            return None, False
        return min(max(u, ul), uh), False

    def gap(u):
        return float(problem.dynamics(x, u)) - x

    us = np.linspace(ul, uh, _ROOT_SCAN)
    gaps = np.asarray(problem.dynamics(np.full_like(us, x), us), float) * np.ones_like(us) - x
    zero = np.flatnonzero(gaps == 0.0)
    change = np.flatnonzero(np.sign(gaps[:-1]) * np.sign(gaps[1:]) < 0)
    candidates = []
    if zero.size:
        candidates.append(us[zero[0]])
    if change.size:
        k = change[0]
        candidates.append(brentq(gap, us[k], us[k + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps))
    if not candidates:
        return None, False
    return float(min(candidates)), False


def steady_input(problem: ScalarGridProblem, x: float) -> Optional[float]:
    """Input holding ``x`` in place, or None if it is outside the input interval or singular."""
    xl, xh = problem.x_interval
    if not xl <= x <= xh:
        raise SteadyStateError(f"x={x} outside the state interval {problem.x_interval}")
    u, singular = _steady_input_info(problem, float(x))
    if singular:
        return None
    return u


def is_singular(problem: ScalarGridProblem, x: float) -> bool:
    return _steady_input_info(problem, float(x))[1]


def _steady_inputs(problem: ScalarGridProblem, xs: np.ndarray) -> np.ndarray:
    """Vectorised steady input with NaN where inadmissible or singular."""
    fam = problem.family
    if fam is not None:
        ul, uh = problem.u_interval
        pad = 1e-12 * max(1.0, abs(ul), abs(uh))
        u = fam.steady_input(xs)
        ok = np.isfinite(u) & (u >= ul - pad) & (u <= uh + pad)
        return np.where(ok, np.clip(u, ul, uh), np.nan)
    out = np.empty_like(xs)
    for i, x in enumerate(xs):
        u, singular = _steady_input_info(problem, float(x))
        out[i] = np.nan if (u is None or singular) else u
    return out


def rotated_steady_cost(problem: ScalarGridProblem, V: GridValueFunction, x):
    """``L~(x, u_s(x))``; on the steady-state manifold ``f(x, u_s) = x``."""
    x = np.atleast_1d(np.asarray(x, float))
    u = _steady_inputs(problem, x)
    ok = np.isfinite(u)
    val = np.full_like(x, np.nan)
    val[ok] = problem.cost(x[ok], u[ok]) + (problem.gamma - 1.0) * evaluate_value(V, x[ok])
    return val, u


def solve_optimal_steady_state(
    problem: Union[ScalarGridProblem, LinearQuadraticProblem],
    V: Optional[GridValueFunction] = None,
    scan_points: int = SCAN_POINTS,
) -> SteadyState:
    if isinstance(problem, LinearQuadraticProblem):
        return SteadyState(np.zeros(problem.n), np.zeros(problem.m), 0.0, problem.gamma)
    if V is None:
        raise ValueError("a converged value function is required for grid problems")

    xs = np.linspace(*problem.x_interval, scan_points)
    vals, us = rotated_steady_cost(problem, V, xs)
    ok = np.isfinite(vals)
    if not ok.any():
        raise SteadyStateError("no admissible steady state in the state interval")
    best = np.nanmin(vals)
    j = int(np.nanargmin(vals))

    # separate basins that come within TIE_TOL of the minimum
    near = ok & (np.where(ok, vals, np.inf) <= best + TIE_TOL)
    runs = np.flatnonzero(np.diff(near.astype(int)) == 1).size + int(near[0])
    multiple = runs > 1

    lo = j - 1 if j > 0 and ok[j - 1] else j
    hi = j + 1 if j + 1 < len(xs) and ok[j + 1] else j
    x_best, f_best = xs[j], vals[j]
    if lo < j < hi:
        obj = lambda x: float(rotated_steady_cost(problem, V, x)[0][0])
        res = minimize_scalar(obj, bracket=(xs[lo], xs[j], xs[hi]), method="golden", tol=1e-12)
        if res.fun < f_best and xs[lo] <= res.x <= xs[hi]:
            x_best, f_best = float(res.x), float(res.fun)
    u_best = steady_input(problem, x_best)
    return SteadyState(float(x_best), float(u_best), float(f_best), problem.gamma, multiple)


@dataclass(frozen=True)
class SweepRow:
    gamma: float
    x_s: float
    u_s: float
    cost_tilde: float
    value: GridValueFunction
    policy: object


def sweep_gamma(problem: ScalarGridProblem, gammas: Sequence[float], tol: Optional[float] = None) -> list[SweepRow]:
    """Fresh DP solve plus steady-state solve per discount factor, in input order."""
    rows = []
    for g in gammas:
        if not 0.0 < g < 1.0:
            raise ValueError(f"sweep discount factors must lie in (0, 1), got {g}")
        p = problem.with_gamma(float(g))
        V, pol = value_iteration(p, tol=tol)
        ss = solve_optimal_steady_state(p, V)
        rows.append(SweepRow(float(g), ss.x_s, ss.u_s, ss.cost_tilde, V, pol))
    return rows
