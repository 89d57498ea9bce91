"""Discounted value iteration on a uniform state-input grid.

Successor values ``V(f(x_i, u_j))`` are obtained by piecewise-linear
interpolation of the nodal table, which keeps the discrete Bellman operator
monotone and a ``gamma``-contraction in the sup norm. Sweeps are synchronous:
every node is updated from the previous table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ScalarGridProblem, check_discount


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(message)


class GridRangeError(ValueError):
    pass


@dataclass(frozen=True)
class GridValueFunction:
    values: np.ndarray
    x_grid: np.ndarray
    gamma: float
    residual: float = 0.0
    iterations: int = 0
    residual_history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        xg = np.array(self.x_grid, dtype=float)
        if v.shape != xg.shape or v.ndim != 1:
            raise ValueError("values and x_grid must be 1-D arrays of equal length")
        if not np.all(np.diff(xg) > 0):
            raise ValueError("x_grid must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        v.setflags(write=False)
        xg.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "x_grid", xg)

    def __call__(self, x):
        return evaluate_value(self, x)

    def shifted(self, offset: float) -> "GridValueFunction":
        return GridValueFunction(self.values - offset, self.x_grid, self.gamma, self.residual, self.iterations)

    def same_grid(self, other: "GridValueFunction") -> bool:
        return self.x_grid.shape == other.x_grid.shape and np.array_equal(self.x_grid, other.x_grid)


@dataclass(frozen=True)
class GridPolicy:
    """Greedy input per state node; ``indices`` point into the input grid."""

    inputs: np.ndarray
    indices: np.ndarray
    x_grid: np.ndarray

    def node_index(self, x) -> np.ndarray:
        return nearest_node(self.x_grid, x)

    def __call__(self, x):
        """Input applied at ``x``: the input of the nearest state node."""
        return self.inputs[self.node_index(x)]


def nearest_node(x_grid: np.ndarray, x) -> np.ndarray:
    x0, x1 = x_grid[0], x_grid[-1]
    t = (np.asarray(x, float) - x0) / (x1 - x0) * (len(x_grid) - 1)
    return np.clip(np.rint(t), 0, len(x_grid) - 1).astype(int)


def interpolation_weights(x_grid: np.ndarray, x):
    """Left-cell indices and right weights for linear interpolation on a uniform grid."""
    n = len(x_grid)
    x0, x1 = x_grid[0], x_grid[-1]
    t = np.clip((np.asarray(x, float) - x0) / (x1 - x0) * (n - 1), 0.0, n - 1.0)
    idx = np.minimum(np.floor(t).astype(int), n - 2)
    return idx, t - idx


def interpolate(values: np.ndarray, idx: np.ndarray, w: np.ndarray):
    return values[idx] * (1.0 - w) + values[idx + 1] * w


def _check_range(x_grid, x, what="x"):
    x = np.asarray(x, float)
    lo, hi = x_grid[0], x_grid[-1]
    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any(x < lo - pad) or np.any(x > hi + pad):
        raise GridRangeError(f"{what} outside the grid range [{lo}, {hi}]")
    return x


def evaluate_value(V: GridValueFunction, x):
    x = _check_range(V.x_grid, x)
    out = np.interp(x, V.x_grid, V.values)
    return float(out) if out.ndim == 0 else out


def numeric_gradient(V: GridValueFunction, x: float, h: Optional[float] = None) -> float:
    """Central difference ``(V(x+h) - V(x-h)) / 2h`` of the interpolated table.

    ``h`` defaults to eight grid spacings and must be at least two.
    """
    dx = V.x_grid[1] - V.x_grid[0]
    if h is None:
        h = 8 * dx
    if h < 2 * dx * (1 - 1e-9):
        raise ValueError(f"h={h} is smaller than two grid spacings ({2 * dx})")
    _check_range(V.x_grid, [x - h, x + h], "gradient stencil")
    return (evaluate_value(V, x + h) - evaluate_value(V, x - h)) / (2 * h)


class _GridModel:
    """Precomputed successor interpolation for one problem."""

    def __init__(self, problem: ScalarGridProblem, cost_table: Optional[np.ndarray] = None):
        self.x_grid = np.asarray(problem.x_grid)
        self.u_grid = np.asarray(problem.u_grid)
        self.idx, self.w = interpolation_weights(self.x_grid, problem.successor_table)
        self.L = problem.cost_table if cost_table is None else np.asarray(cost_table, float)

    def q_values(self, values: np.ndarray, gamma: float) -> np.ndarray:
        return self.L + gamma * interpolate(values, self.idx, self.w)


def bellman_sweep(problem: ScalarGridProblem, values, gamma: Optional[float] = None, cost_table=None):
    """One synchronous Bellman update of a nodal table."""
    model = _GridModel(problem, cost_table)
    g = problem.gamma if gamma is None else gamma
    return model.q_values(np.asarray(values, float), g).min(axis=1)


def default_tolerance(problem: ScalarGridProblem, cost_table=None, rel: float = 1e-8) -> float:
    """``rel * max(1, |L|_inf) / (1 - gamma)``; the fixed point is then within ``gamma * tol / (1 - gamma)``."""
    L = problem.cost_table if cost_table is None else cost_table
    return rel * max(1.0, float(np.abs(L).max())) / (1.0 - problem.gamma)


def value_iteration(
    problem: ScalarGridProblem,
    tol: Optional[float] = None,
    max_iter: int = 200_000,
    cost_table: Optional[np.ndarray] = None,
    initial: Optional[np.ndarray] = None,
) -> tuple[GridValueFunction, GridPolicy]:
    """Iterate ``V <- min_u L + gamma * V(f)`` until the sup-norm update is ``<= tol``.

    ``cost_table`` overrides the problem's stage cost on the grid (shape ``(nx, nu)``).
    """
    gamma = check_discount(problem.gamma, strict=True)
    model = _GridModel(problem, cost_table)
    if tol is None:
        tol = default_tolerance(problem, model.L)
    V = np.zeros(problem.nx) if initial is None else np.array(initial, dtype=float)
    history = []
    residual = np.inf
    for it in range(1, max_iter + 1):
        V_next = model.q_values(V, gamma).min(axis=1)
        residual = float(np.abs(V_next - V).max())
        history.append(residual)
        V = V_next
        if residual <= tol:
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps (residual {residual:.3e})", residual)
    # residual of one further sweep, as reported
    q = model.q_values(V, gamma)
    final = float(np.abs(q.min(axis=1) - V).max())
    vf = GridValueFunction(V, model.x_grid, gamma, final, it, tuple(history))
    return vf, _policy_from_q(q, model)


def _policy_from_q(q: np.ndarray, model: _GridModel) -> GridPolicy:
    # np.argmin returns the first minimiser, i.e. the smallest input on ties
    j = np.argmin(q, axis=1)
    u = model.u_grid[j]
    j.setflags(write=False)
    u.setflags(write=False)
    return GridPolicy(inputs=u, indices=j, x_grid=model.x_grid)


def greedy_policy(
    problem: ScalarGridProblem,
    V: GridValueFunction,
    gamma: Optional[float] = None,
    cost_table: Optional[np.ndarray] = None,
) -> GridPolicy:
    """Per-node minimiser of ``L + gamma * V(f)`` over the input grid."""
    model = _GridModel(problem, cost_table)
    if not np.array_equal(model.x_grid, V.x_grid):
        raise GridRangeError("value function is defined on a different grid")
    g = problem.gamma if gamma is None else float(gamma)
    return _policy_from_q(model.q_values(V.values, g), model)


def successor_values(problem: ScalarGridProblem, V: GridValueFunction) -> np.ndarray:
    """``V(f(x_i, u_j))`` on the grid, using the same interpolation as the sweeps."""
    model = _GridModel(problem)
    return interpolate(np.asarray(V.values), model.idx, model.w)


def finite_horizon_undiscounted(
    problem: ScalarGridProblem,
    cost_table: np.ndarray,
    terminal: GridValueFunction,
    horizon: int,
) -> tuple[np.ndarray, GridPolicy]:
    """Undiscounted backward recursion ``W <- min_u c(x, u) + W(f)`` from ``terminal``.

    Returns the final nodal table and the first-stage policy.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    model = _GridModel(problem, cost_table)
    W = np.asarray(terminal.values, float)
    for _ in range(horizon):
        q = model.q_values(W, 1.0)
        W = q.min(axis=1)
    return W, _policy_from_q(q, model)


def export_csv_rows(V: GridValueFunction, policy: GridPolicy):
    """Rows ``(x, V, u_star)`` for tabulated output."""
    return [(float(x), float(v), float(u)) for x, v, u in zip(V.x_grid, V.values, policy.inputs)]
