"""Quadratic SDSD certificates for linear-quadratic problems.

With storage ``lambda(x) = x' Lam x`` both dissipation inequalities are
quadratic forms in ``z = [x; u]``:

* condition (i):  ``L + lambda - gamma * lambda(f)            = z' H_i z``
* condition (ii): ``L + lambda - lambda(f) + (gamma-1) V*(f)   = z' H_ii z``

so each holds with margin ``eps * |z|^2`` iff the matrix minus ``eps*I`` is
positive semidefinite. Synthesis maximises the smaller of the two minimum
eigenvalues over the free entries of ``Lam`` with a multi-start Nelder-Mead
search, which is adequate for the handful of unknowns involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .lqr import BISECTION_TOL, BRACKET, RiccatiSolution, ThresholdResult, bisect_threshold, solve_dare
from .model import LinearQuadraticProblem

DEFAULT_EPSILON = 1e-6
BOUNDARY_EPSILON = 1e-9
N_STARTS = 16
CONDITIONS = ("i", "ii")


@dataclass(frozen=True)
class QuadraticStorage:
    Lambda: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if L.shape[0] != L.shape[1] or not np.allclose(L, L.T, rtol=0, atol=1e-12 * max(1.0, np.abs(L).max())):
            raise ValueError("storage matrix must be square and symmetric")
        L = (L + L.T) / 2
        L.setflags(write=False)
        object.__setattr__(self, "Lambda", L)

    @classmethod
    def zero(cls, n: int) -> "QuadraticStorage":
        return cls(np.zeros((n, n)))

    @classmethod
    def from_params(cls, p, n: int) -> "QuadraticStorage":
        """Build from the ``n(n+1)/2`` upper-triangular entries (row-major)."""
        L = np.zeros((n, n))
        L[np.triu_indices(n)] = p
        return cls(L + np.triu(L, 1).T)

    def params(self) -> np.ndarray:
        return self.Lambda[np.triu_indices(self.Lambda.shape[0])].copy()

    def __call__(self, x) -> float:
        x = np.asarray(x, float)
        return float(x @ self.Lambda @ x)

    def to_json(self) -> str:
        return json.dumps({"Lambda": self.Lambda.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "QuadraticStorage":
        return cls(np.array(json.loads(text)["Lambda"], dtype=float))


@dataclass(frozen=True)
class SdsdReport:
    margin_i: float
    margin_ii: float
    margin_phat: float
    feasible: bool
    epsilon: float
    # eigenvectors attaining each minimum eigenvalue
    witness_i: np.ndarray = field(repr=False)
    witness_ii: np.ndarray = field(repr=False)
    # strictness in x only: min eigenvalue of the Schur complement of the u-block,
    # -inf when the u-block is not positive definite
    schur_margin_i: float = float("nan")
    schur_margin_ii: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "margin_i": self.margin_i,
            "margin_ii": self.margin_ii,
            "margin_phat": self.margin_phat,
            "schur_margin_i": self.schur_margin_i,
            "schur_margin_ii": self.schur_margin_ii,
            "feasible": self.feasible,
            "epsilon": self.epsilon,
            "witness_i": self.witness_i.tolist(),
            "witness_ii": self.witness_ii.tolist(),
        }


class CertificateInfeasible(RuntimeError):
    """No storage matrix reached the required margin; the best attempt is attached."""

    def __init__(self, best_margin: float, storage: QuadraticStorage, gamma: float):
        self.best_margin = best_margin
        self.storage = storage
        self.gamma = gamma
        super().__init__(f"no SDSD certificate at gamma={gamma}: best margin {best_margin:.3e}")


def _lifts(problem: LinearQuadraticProblem):
    n, m = problem.n, problem.m
    E = np.hstack([np.eye(n), np.zeros((n, m))])      # z -> x
    F = np.hstack([problem.A, problem.B])               # z -> f(x, u)
    H0 = np.zeros((n + m, n + m))
    H0[:n, :n] = problem.Q
    H0[n:, n:] = problem.R
    return E, F, H0


def _sym(M):
    return (M + M.T) / 2


def assemble_condition_i(problem: LinearQuadraticProblem, storage: QuadraticStorage) -> np.ndarray:
    E, F, H0 = _lifts(problem)
    Lam = storage.Lambda
    return _sym(H0 + E.T @ Lam @ E - problem.gamma * F.T @ Lam @ F)


def assemble_condition_ii(problem: LinearQuadraticProblem, storage: QuadraticStorage, P) -> np.ndarray:
    E, F, H0 = _lifts(problem)
    Lam = storage.Lambda
    theta = Lam + (1.0 - problem.gamma) * np.asarray(P, float)
    return _sym(H0 + E.T @ Lam @ E - F.T @ theta @ F)


def _min_eig(H):
    w, V = np.linalg.eigh(H)
    return float(w[0]), V[:, 0]


def _schur_margin(H, n):
    Huu = H[n:, n:]
    if np.linalg.eigvalsh(Huu)[0] <= 0:
        return float("-inf")
    S = H[:n, :n] - H[:n, n:] @ np.linalg.solve(Huu, H[n:, :n])
    return float(np.linalg.eigvalsh(_sym(S))[0])


def verify_certificate(
    problem: LinearQuadraticProblem,
    storage: QuadraticStorage,
    epsilon: float = DEFAULT_EPSILON,
    riccati: Optional[RiccatiSolution] = None,
) -> SdsdReport:
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if riccati is None:
        riccati = solve_dare(problem)
    Hi = assemble_condition_i(problem, storage)
    Hii = assemble_condition_ii(problem, storage, riccati.P)
    mi, wi = _min_eig(Hi)
    mii, wii = _min_eig(Hii)
    mp = float(np.linalg.eigvalsh(_sym(riccati.P + storage.Lambda))[0])
    return SdsdReport(
        margin_i=mi,
        margin_ii=mii,
        margin_phat=mp,
        feasible=bool(min(mi, mii) > epsilon and mp > 0),
        epsilon=epsilon,
        witness_i=wi,
        witness_ii=wii,
        schur_margin_i=_schur_margin(Hi, problem.n),
        schur_margin_ii=_schur_margin(Hii, problem.n),
    )


def _margin_objective(problem: LinearQuadraticProblem, P, conditions: Sequence[str]):
    E, F, H0 = _lifts(problem)
    n = problem.n
    g = problem.gamma
    FPF = F.T @ P @ F
    iu = np.triu_indices(n)
    pick = sorted({CONDITIONS.index(c) for c in conditions})

    def margins(p):
        Lam = np.zeros((n, n))
        Lam[iu] = p
        Lam = Lam + np.triu(Lam, 1).T
        ELE = E.T @ Lam @ E
        FLF = F.T @ Lam @ F
        stack = np.stack([H0 + ELE - g * FLF, H0 + ELE - FLF - (1.0 - g) * FPF])[pick]
        return np.linalg.eigvalsh(stack)[:, 0]

    return lambda p: -float(margins(p).min())


def synthesize_certificate(
    problem: LinearQuadraticProblem,
    epsilon: float = BOUNDARY_EPSILON,
    seed: int = 0,
    conditions: Sequence[str] = CONDITIONS,
    starts: int = N_STARTS,
    riccati: Optional[RiccatiSolution] = None,
) -> QuadraticStorage:
    """Search for ``Lam`` making the requested conditions hold with margin ``> epsilon``.

    Deterministic for a given ``seed``. Raises :class:`CertificateInfeasible`
    carrying the best margin and matrix found when the search fails.
    """
    conditions = tuple(conditions)
    if not conditions or any(c not in CONDITIONS for c in conditions):
        raise ValueError(f"conditions must be a non-empty subset of {CONDITIONS}")
    if not 0.0 < problem.gamma < 1.0:
        raise ValueError("synthesis requires 0 < gamma < 1")
    if riccati is None:
        riccati = solve_dare(problem)
    n = problem.n
    objective = _margin_objective(problem, riccati.P, conditions)
    dim = n * (n + 1) // 2
    rng = np.random.default_rng(seed)

    best = None
    for _ in range(starts):
        scale = rng.uniform(0.5, 5.0)
        x0 = scale * rng.standard_normal(dim)
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxfev": 3000})
        # strict '<' keeps the earliest start on ties
        if best is None or res.fun < best.fun:
            best = res
    # polish: restart the simplex around the incumbent until it stops improving
    for _ in range(50):
        res = minimize(objective, best.x, method="Nelder-Mead",
                       options={"xatol": 1e-13, "fatol": 1e-16, "maxfev": 3000})
        improved = res.fun < best.fun - 1e-16
        if res.fun <= best.fun:
            best = res
        if not improved:
            break

    storage = QuadraticStorage.from_params(best.x, n)
    margin = -float(best.fun)
    phat = float(np.linalg.eigvalsh(_sym(riccati.P + storage.Lambda))[0])
    needs_phat = "ii" in conditions and "i" in conditions
    if margin <= epsilon or (needs_phat and phat <= 0):
        raise CertificateInfeasible(margin, storage, problem.gamma)
    return storage


def lambda_zero_feasible(problem: LinearQuadraticProblem) -> bool:
    P = solve_dare(problem).P
    return np.linalg.eigvalsh(assemble_condition_ii(problem, QuadraticStorage.zero(problem.n), P))[0] > 0.0


def lambda_zero_threshold(template: LinearQuadraticProblem, tol: float = BISECTION_TOL, bracket=BRACKET) -> ThresholdResult:
    """Smallest gamma at which condition (ii) holds strictly without storage."""
    return bisect_threshold(lambda g: lambda_zero_feasible(template.with_gamma(g)), "lambda_zero", bracket, tol)
