"""Closed-loop rollouts and convergence diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .dp import GridPolicy
from .lqr import RiccatiSolution
from .model import LinearQuadraticProblem, ScalarGridProblem

LQR_CONVERGENCE_TOL = 1e-8


class RangeExitError(RuntimeError):
    def __init__(self, step: int, state):
        self.step = step
        self.state = state
        super().__init__(f"trajectory left the state interval at step {step} (x={state})")


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray     # (N+1,) or (N+1, n)
    inputs: np.ndarray     # (N,) or (N, m)
    distances: np.ndarray  # (N+1,)

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class ConvergenceMetrics:
    converged: bool
    final_distance: float
    decay_ratio: float


def simulate(
    problem: Union[ScalarGridProblem, LinearQuadraticProblem],
    policy: Union[GridPolicy, RiccatiSolution, np.ndarray, Callable],
    x0,
    N: int,
    x_s=None,
) -> Trajectory:
    """Roll out ``x_{k+1} = f(x_k, pi(x_k))`` for ``N`` steps.

    Grid policies act through their nearest state node. For grid problems a
    state outside the state interval raises :class:`RangeExitError`; linear
    problems are rolled out without range checks. Distances are measured to
    ``x_s``; without it, to the origin for linear problems and to the final
    state for grid problems.
    """
    if N < 0:
        raise ValueError("N must be non-negative")
    if isinstance(problem, LinearQuadraticProblem):
        K = policy.K if isinstance(policy, RiccatiSolution) else np.atleast_2d(np.asarray(policy, float))
        x = np.asarray(x0, float).reshape(problem.n)
        states = np.empty((N + 1, problem.n))
        inputs = np.empty((N, problem.m))
        states[0] = x
        for k in range(N):
            u = K @ x
            x = problem.A @ x + problem.B @ u
            inputs[k] = u
            states[k + 1] = x
        ref = np.zeros(problem.n) if x_s is None else np.asarray(x_s, float)
        dist = np.linalg.norm(states - ref, axis=1)
        return Trajectory(states, inputs, dist)

    lo, hi = problem.x_interval
    pad = 1e-12 * max(1.0, abs(lo), abs(hi))
    x = float(x0)
    if not lo - pad <= x <= hi + pad:
        raise RangeExitError(0, x)
    states = np.empty(N + 1)
    inputs = np.empty(N)
    states[0] = x
    for k in range(N):
        u = float(policy(x))
        x = float(problem.dynamics(x, u))
        if not lo - pad <= x <= hi + pad:
            raise RangeExitError(k + 1, x)
        inputs[k] = u
        states[k + 1] = x
    ref = states[-1] if x_s is None else float(x_s)
    return Trajectory(states, inputs, np.abs(states - ref))


def convergence_metrics(traj: Trajectory, x_s=None, tol: Optional[float] = None, grid_dx: Optional[float] = None) -> ConvergenceMetrics:
    """Converged iff the final distance to ``x_s`` is within ``tol``.

    ``tol`` defaults to two grid cells when ``grid_dx`` is given, else 1e-8.
    ``decay_ratio`` is the per-step factor of a log-linear fit to the tail of
    the distance sequence (second half, positive entries only).
    """
    if len(traj.states) == 0:
        raise ValueError("empty trajectory")
    if x_s is None:
        d = traj.distances
    else:
        diff = np.asarray(traj.states, float) - np.asarray(x_s, float)
        d = np.abs(diff) if diff.ndim == 1 else np.linalg.norm(diff, axis=1)
    if tol is None:
        tol = 2 * grid_dx if grid_dx is not None else LQR_CONVERGENCE_TOL
    final = float(d[-1])
    tail = d[len(d) // 2:]
    tail = tail[tail > 0]
    if tail.size >= 2:
        k = np.arange(tail.size)
        slope = np.polyfit(k, np.log(tail), 1)[0]
        ratio = float(np.exp(slope))
    else:
        ratio = 0.0
    return ConvergenceMetrics(bool(final <= tol), final, ratio)


def closed_loop_limit(problem: ScalarGridProblem, policy: GridPolicy, x0: float, N: int = 2000) -> float:
    return float(simulate(problem, policy, x0, N).states[-1])
