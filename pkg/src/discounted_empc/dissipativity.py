"""Cost rotations, grid SDSD verification and the equivalence/decrease identities.

Notation used throughout (``lam`` is the storage function, ``V`` the optimal
value function of the discounted problem, ``f`` the dynamics):

* modified cost      ``L^(x,u)  = L + lam(x) - gamma * lam(f)``
* rotated cost       ``L~(x,u)  = L + (gamma - 1) * V(f)``
* hat-tilde cost     ``L^~(x,u) = L^ + (gamma - 1) * (V + lam)(f)``

Checks on the nonlinear example expect the *normalized* problem, i.e. the
stage cost shifted so that ``L(x_s, u_s) = 0`` and the value table shifted by
``L(x_s, u_s) / (1 - gamma)``; see :func:`normalize`.

Most functions accept either a :class:`ScalarGridProblem` (with a
:class:`StorageFunction` and :class:`GridValueFunction`) or a
:class:`LinearQuadraticProblem` (with a :class:`QuadraticStorage` and a
:class:`RiccatiSolution` or value matrix).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import dp
from .certificate import QuadraticStorage, assemble_condition_i
from .dp import GridPolicy, GridValueFunction
from .lqr import RiccatiSolution
from .model import LinearQuadraticProblem, ScalarGridProblem
from .sim import simulate
from .steady_state import SteadyState, solve_optimal_steady_state

STORAGE_CURVATURE = 50.0


@dataclass(frozen=True)
class StorageFunction:
    """``lam(x) = -gradient * (x - x_s) + curvature * (x - x_s)^2``; zero at ``x_s``."""

    x_s: float
    gradient: float
    curvature: float = STORAGE_CURVATURE

    def __post_init__(self):
        for name in ("x_s", "gradient", "curvature"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def from_value_function(cls, V: GridValueFunction, x_s: float, curvature: float = STORAGE_CURVATURE,
                            h: Optional[float] = None) -> "StorageFunction":
        return cls(x_s, dp.numeric_gradient(V, x_s, h), curvature)

    @classmethod
    def zero(cls, x_s: float = 0.0) -> "StorageFunction":
        return cls(x_s, 0.0, 0.0)

    def __call__(self, x):
        d = np.asarray(x, float) - self.x_s
        return -self.gradient * d + self.curvature * d * d


Storage = Union[StorageFunction, QuadraticStorage]
ValueLike = Union[GridValueFunction, RiccatiSolution, np.ndarray]


def _value_fn(V: ValueLike):
    if isinstance(V, GridValueFunction):
        return V
    P = V.P if isinstance(V, RiccatiSolution) else np.asarray(V, float)
    return lambda x: float(np.asarray(x, float) @ P @ np.asarray(x, float))


def normalize(problem: ScalarGridProblem, V: GridValueFunction, steady: SteadyState):
    """Shift cost and value so both vanish at the steady state.

    Returns ``(problem_bar, V_bar, offset)`` with ``offset = L(x_s, u_s)``.
    Policies and the steady-state minimiser are unaffected by the shift.
    """
    offset = float(problem.cost(steady.x_s, steady.u_s))
    return problem.shifted(offset), V.shifted(offset / (1.0 - problem.gamma)), offset


# -- pointwise cost transforms ----------------------------------------------

def modified_cost_hat(problem, storage: Storage, x, u):
    f = problem.dynamics(x, u)
    return problem.cost(x, u) + storage(x) - problem.gamma * storage(f)


def rotated_cost_tilde(problem, V: ValueLike, x, u):
    Vf = _value_fn(V)
    return problem.cost(x, u) + (problem.gamma - 1.0) * Vf(problem.dynamics(x, u))


def rotated_cost_hat_tilde(problem, storage: Storage, V: ValueLike, x, u):
    Vf = _value_fn(V)
    f = problem.dynamics(x, u)
    return modified_cost_hat(problem, storage, x, u) + (problem.gamma - 1.0) * (Vf(f) + storage(f))


def condition_i_lhs(problem, storage: Storage, x, u):
    return modified_cost_hat(problem, storage, x, u)


def condition_ii_lhs(problem, storage: Storage, V: ValueLike, x, u):
    Vf = _value_fn(V)
    f = problem.dynamics(x, u)
    return problem.cost(x, u) + storage(x) - storage(f) + (problem.gamma - 1.0) * Vf(f)


def condition_ii_twisted(problem, storage: Storage, V: ValueLike, x, u):
    """Condition (ii) rewritten through the modified cost and ``V^ = V + lam``."""
    Vf = _value_fn(V)
    f = problem.dynamics(x, u)
    return modified_cost_hat(problem, storage, x, u) - (1.0 - problem.gamma) * (Vf(f) + storage(f))


# -- grid SDSD verification --------------------------------------------------

@dataclass(frozen=True)
class GridSdsdReport:
    margin_i: float
    margin_ii: float
    witness_i: tuple[float, float]
    witness_ii: tuple[float, float]
    epsilon: float
    # largest eps for which the quadratic margin eps*(x - x_s)^2 still holds
    max_epsilon_i: float
    max_epsilon_ii: float

    @property
    def feasible(self) -> bool:
        return self.margin_i >= 0.0 and self.margin_ii >= 0.0

    def to_dict(self) -> dict:
        return {
            "margin_i": self.margin_i,
            "margin_ii": self.margin_ii,
            "witness_i": list(self.witness_i),
            "witness_ii": list(self.witness_ii),
            "epsilon": self.epsilon,
            "max_epsilon_i": self.max_epsilon_i,
            "max_epsilon_ii": self.max_epsilon_ii,
            "feasible": self.feasible,
        }


def _largest_epsilon(lhs: np.ndarray, s2: np.ndarray) -> float:
    at_ss = s2 == 0.0
    if np.any(lhs[at_ss] < 0.0):
        return float("-inf")
    off = ~at_ss
    if not off.any():
        return float("inf")
    return float(np.min(lhs[off] / s2[off]))


def condition_tables(problem: ScalarGridProblem, storage: StorageFunction, V: GridValueFunction):
    """Left-hand sides of conditions (i) and (ii) on every grid pair."""
    X, U = problem.grid_pairs()
    return condition_i_lhs(problem, storage, X, U), condition_ii_lhs(problem, storage, V, X, U)


def check_sdsd_on_grid(problem: ScalarGridProblem, storage: StorageFunction, V: GridValueFunction,
                       epsilon: float = 0.0) -> GridSdsdReport:
    """Exhaustive minimum over grid pairs of each condition minus ``eps * (x - x_s)^2``."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    X, U = problem.grid_pairs()
    ci, cii = condition_tables(problem, storage, V)
    s2 = (X - storage.x_s) ** 2
    ri = ci - epsilon * s2
    rii = cii - epsilon * s2
    ji = np.unravel_index(np.argmin(ri), ri.shape)
    jii = np.unravel_index(np.argmin(rii), rii.shape)
    return GridSdsdReport(
        margin_i=float(ri[ji]),
        margin_ii=float(rii[jii]),
        witness_i=(float(X[ji]), float(U[ji])),
        witness_ii=(float(X[jii]), float(U[jii])),
        epsilon=float(epsilon),
        max_epsilon_i=_largest_epsilon(ci, s2),
        max_epsilon_ii=_largest_epsilon(cii, s2),
    )


# -- value shift (modified cost has value V + lam) ----------------------------

def hat_cost_table(problem: ScalarGridProblem, storage: StorageFunction, rule: str = "grid") -> np.ndarray:
    """Modified stage cost on the grid, for dynamic programming.

    ``rule="exact"`` evaluates ``lam(f)`` exactly. ``rule="grid"`` reads
    ``lam(f)`` through the grid's own interpolation, which is the modified
    cost of the discretised problem itself: the value shift and the policy
    invariance then hold to round-off instead of to interpolation accuracy.
    """
    X, U = problem.grid_pairs()
    if rule == "exact":
        return modified_cost_hat(problem, storage, X, U)
    if rule != "grid":
        raise ValueError(f"unknown rule {rule!r}")
    lam_nodes = GridValueFunction(storage(problem.x_grid), problem.x_grid, problem.gamma)
    lam_f = dp.successor_values(problem, lam_nodes)
    return problem.cost_table + storage(X) - problem.gamma * lam_f


def value_iteration_hat(problem: ScalarGridProblem, storage: StorageFunction, tol: Optional[float] = None,
                        rule: str = "grid"):
    table = hat_cost_table(problem, storage, rule)
    if tol is None:
        tol = dp.default_tolerance(problem, table, rel=TIGHT_REL_TOL)
    return dp.value_iteration(problem, tol=tol, cost_table=table)


def check_value_shift(problem: ScalarGridProblem, storage: StorageFunction, V: GridValueFunction,
                      V_hat: GridValueFunction) -> float:
    """``max_i |V^(x_i) - V(x_i) - lam(x_i)|`` over the state nodes."""
    if not V.same_grid(V_hat) or not np.array_equal(V.x_grid, problem.x_grid):
        raise dp.GridRangeError("value tables live on different grids")
    return float(np.max(np.abs(V_hat.values - V.values - storage(V.x_grid))))


def interpolation_slack(values) -> float:
    """Worst linear-interpolation error of a function with these nodal values.

    Uses ``h^2 max|f''| / 8`` with the second derivative estimated by second
    differences, i.e. ``max |v[i-1] - 2 v[i] + v[i+1]| / 8``.
    """
    v = np.asarray(values, float)
    if v.size < 3:
        return 0.0
    return float(np.max(np.abs(np.diff(v, 2)))) / 8.0


def value_shift_slack(problem: ScalarGridProblem, storage: StorageFunction) -> float:
    """Bound on the value-shift error from interpolating ``lam`` at successors."""
    return interpolation_slack(storage(problem.x_grid)) / (1.0 - problem.gamma)


# -- undiscounted equivalence ----------------------------------------------------

def tilde_cost_table(problem: ScalarGridProblem, V: GridValueFunction) -> np.ndarray:
    return problem.cost_table + (problem.gamma - 1.0) * dp.successor_values(problem, V)


def tilde_policy(problem: ScalarGridProblem, V: GridValueFunction, horizon: int = 1) -> GridPolicy:
    """First-stage policy of the undiscounted problem with cost ``L~`` and terminal value ``V``."""
    return dp.finite_horizon_undiscounted(problem, tilde_cost_table(problem, V), V, horizon)[1]


def telescopic_check(problem, V: ValueLike, policy, x0, N: int) -> float:
    """``|sum_{k<N} L~(x_k, u_k) - V(x_0)|`` along the closed loop from ``x0``.

    For grid problems ``V`` should be normalized so that it vanishes at the
    steady state; the residual is then bounded by ``|V(x_N)|`` plus the
    accumulated interpolation error.
    """
    if isinstance(problem, LinearQuadraticProblem):
        sol = V if isinstance(V, RiccatiSolution) else None
        P = sol.P if sol is not None else np.asarray(V, float)
        K = sol.K if policy is None and sol is not None else np.asarray(policy, float)
        traj = simulate(problem, K, x0, N)
        total = 0.0
        for k in range(N):
            total += rotated_cost_tilde(problem, P, traj.states[k], traj.inputs[k])
        x0 = np.asarray(x0, float)
        return abs(total - float(x0 @ P @ x0))
    traj = simulate(problem, policy, x0, N)
    costs = rotated_cost_tilde(problem, V, traj.states[:-1], traj.inputs)
    return float(abs(np.sum(costs) - dp.evaluate_value(V, x0)))


def weak_stability_residual(problem: ScalarGridProblem, V_bar: GridValueFunction, policy: GridPolicy,
                            x0: float, N: int) -> float:
    """``|V_bar(x_N)|`` along the closed loop; small when the closed loop settles at the steady state."""
    traj = simulate(problem, policy, x0, N)
    return abs(dp.evaluate_value(V_bar, traj.states[-1]))


# -- Lyapunov decrease -----------------------------------------------------------

@dataclass(frozen=True)
class DecreaseReport:
    states: np.ndarray
    hat_values: np.ndarray
    decreases: np.ndarray      # V^(x_{k+1}) - V^(x_k)
    bounds: np.ndarray         # -eps * |x_k - x_s|^2
    worst_violation: float     # max_k (decrease_k - bound_k)
    slack: float

    @property
    def violated(self) -> bool:
        return self.worst_violation > self.slack


def lyapunov_decrease_check(problem, storage: Storage, V: ValueLike, policy, x0, N: int,
                            epsilon: float = 0.0, slack: Optional[float] = None) -> DecreaseReport:
    """Check ``V^(x_{k+1}) - V^(x_k) <= -eps |x_k - x_s|^2 + slack`` along the closed loop.

    ``V^ = V + lam``. The default slack is the interpolation slack of the
    nodal ``V^`` table for grid problems and round-off level for linear ones.
    """
    if isinstance(problem, LinearQuadraticProblem):
        sol = V if isinstance(V, RiccatiSolution) else None
        P = sol.P if sol is not None else np.asarray(V, float)
        K = sol.K if policy is None and sol is not None else policy
        traj = simulate(problem, K, x0, N)
        Phat = P + storage.Lambda
        vh = np.einsum("ki,ij,kj->k", traj.states, Phat, traj.states)
        dist2 = np.sum(traj.states[:-1] ** 2, axis=1)
        if slack is None:
            slack = 1e-12 * max(1.0, float(np.max(np.abs(vh))))
    else:
        traj = simulate(problem, policy, x0, N)
        vh = dp.evaluate_value(V, traj.states) + storage(traj.states)
        dist2 = (traj.states[:-1] - storage.x_s) ** 2
        if slack is None:
            slack = interpolation_slack(V.values + storage(V.x_grid))
    dec = np.diff(vh)
    bounds = -epsilon * dist2
    worst = float(np.max(dec - bounds)) if dec.size else 0.0
    return DecreaseReport(traj.states, vh, dec, bounds, worst, float(slack))


# -- comparison with the constant-C conditions -------------------------------------------

@dataclass(frozen=True)
class GaitsgoryReport:
    C: float
    slack_inf: float       # min over annulus of C * inf_u L^ - V^
    slack_policy: float    # min over annulus of C * L^(x, pi(x)) - V^
    witness_inf: Optional[float]
    witness_policy: Optional[float]

    @property
    def holds_inf(self) -> bool:
        return self.slack_inf >= 0.0

    @property
    def holds_policy(self) -> bool:
        return self.slack_policy >= 0.0


def check_gaitsgory_pointwise(problem, storage: Storage, V: ValueLike, policy, C: float,
                              phi: float = 0.0, Phi: float = np.inf) -> GaitsgoryReport:
    """Evaluate ``V^ <= C inf_u L^`` and ``V^ <= C L^(x, pi(x))`` for ``phi <= |x - x_s| <= Phi``.

    For linear-quadratic problems both sides are quadratic forms and the
    slacks are minimum eigenvalues over the unit sphere (the annulus bounds
    only rescale them and are ignored).
    """
    gamma = problem.gamma
    if not (1.0 <= C and (gamma == 1.0 or C < 1.0 / (1.0 - gamma))):
        raise ValueError(f"C must satisfy 1 <= C < 1/(1-gamma), got C={C}, gamma={gamma}")
    if not 0.0 <= phi <= Phi:
        raise ValueError("annulus requires 0 <= phi <= Phi")

    if isinstance(problem, LinearQuadraticProblem):
        sol = V if isinstance(V, RiccatiSolution) else None
        P = sol.P if sol is not None else np.asarray(V, float)
        K = sol.K if policy is None and sol is not None else np.asarray(policy, float)
        n = problem.n
        H = assemble_condition_i(problem, storage)
        Huu = H[n:, n:]
        S = H[:n, :n] - H[:n, n:] @ np.linalg.solve(Huu, H[n:, :n])
        T = np.vstack([np.eye(n), K])
        Phat = P + storage.Lambda
        s_inf = np.linalg.eigvalsh(C * (S + S.T) / 2 - Phat)[0]
        Hpol = T.T @ H @ T
        s_pol = np.linalg.eigvalsh(C * (Hpol + Hpol.T) / 2 - Phat)[0]
        return GaitsgoryReport(float(C), float(s_inf), float(s_pol), None, None)

    xg = problem.x_grid
    d = np.abs(xg - storage.x_s)
    mask = (d >= phi) & (d <= Phi)
    if not mask.any():
        raise ValueError("no grid states in the annulus")
    X, U = problem.grid_pairs()
    Lhat = modified_cost_hat(problem, storage, X, U)
    vhat = V.values + storage(xg)
    inf_l = Lhat.min(axis=1)
    pol_l = modified_cost_hat(problem, storage, xg, policy(xg))
    r_inf = np.where(mask, C * inf_l - vhat, np.inf)
    r_pol = np.where(mask, C * pol_l - vhat, np.inf)
    i, j = int(np.argmin(r_inf)), int(np.argmin(r_pol))
    return GaitsgoryReport(float(C), float(r_inf[i]), float(r_pol[j]), float(xg[i]), float(xg[j]))


# -- end-to-end analysis of a scalar grid problem --------------------------------------

TIGHT_REL_TOL = 1e-12


@dataclass(frozen=True)
class GridAnalysis:
    problem: ScalarGridProblem
    V: GridValueFunction
    policy: GridPolicy
    steady: SteadyState
    storage: StorageFunction
    problem_bar: ScalarGridProblem
    V_bar: GridValueFunction
    offset: float


def analyze_grid(problem: ScalarGridProblem, tol: Optional[float] = None,
                 curvature: float = STORAGE_CURVATURE) -> GridAnalysis:
    """Value iteration, optimal steady state, storage function and normalization.

    The default tolerance is much tighter than the plain DP default: the
    dissipation margins near the steady state are of order 1e-8 and would
    otherwise be swamped by the value-iteration error.
    """
    if tol is None:
        tol = dp.default_tolerance(problem, rel=TIGHT_REL_TOL)
    V, policy = dp.value_iteration(problem, tol=tol)
    steady = solve_optimal_steady_state(problem, V)
    storage = StorageFunction.from_value_function(V, steady.x_s, curvature)
    pbar, vbar, offset = normalize(problem, V, steady)
    return GridAnalysis(problem, V, policy, steady, storage, pbar, vbar, offset)
