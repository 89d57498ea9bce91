"""Problem definitions and configuration loading.

Two problem classes are supported:

* :class:`LinearQuadraticProblem` -- ``x+ = A x + B u`` with stage cost
  ``x'Qx + u'Ru``.
* :class:`ScalarGridProblem` -- a scalar nonlinear system on a box, solved by
  dynamic programming on a uniform grid.

All problem objects are immutable after construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

import jsonschema
import numpy as np

from .expression import Expression, ExpressionSyntaxError


class ProblemError(ValueError):
    """A problem definition violates a schema rule or an invariant.

    ``field`` names the offending configuration field when known.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class OutOfBoxError(ValueError):
    pass


def check_discount(gamma: float, *, strict: bool = False) -> float:
    """Validate a discount factor: ``0 < gamma <= 1`` (``< 1`` if ``strict``)."""
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0.0 or gamma > 1.0:
        raise ProblemError(f"discount factor must lie in (0, 1], got {gamma}", "gamma")
    if strict and gamma >= 1.0:
        raise ProblemError(f"strict discounting requires gamma < 1, got {gamma}", "gamma")
    return gamma


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float))
    if arr.ndim != 2:
        raise ProblemError("must be a 2-D matrix", name)
    if not np.all(np.isfinite(arr)):
        raise ProblemError("contains non-finite entries", name)
    return arr


def _check_symmetric(M: np.ndarray, name: str) -> None:
    if M.shape[0] != M.shape[1]:
        raise ProblemError(f"must be square, got shape {M.shape}", name)
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ProblemError("must be symmetric", name)


@dataclass(frozen=True)
class LinearQuadraticProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    state_box: Optional[np.ndarray] = None
    input_box: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n):
            raise ProblemError(f"must be square, got shape {A.shape}", "A")
        if B.shape[0] != n:
            raise ProblemError(f"expected {n} rows, got {B.shape[0]}", "B")
        if Q.shape != (n, n):
            raise ProblemError(f"expected shape {(n, n)}, got {Q.shape}", "Q")
        if R.shape != (m, m):
            raise ProblemError(f"expected shape {(m, m)}, got {R.shape}", "R")
        _check_symmetric(Q, "Q")
        _check_symmetric(R, "R")
        Q = (Q + Q.T) / 2
        R = (R + R.T) / 2
        if np.linalg.eigvalsh(Q)[0] < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ProblemError("must be positive semidefinite", "Q")
        if np.linalg.eigvalsh(R)[0] <= 1e-12 * max(1.0, np.abs(R).max()):
            raise ProblemError("must be positive definite", "R")
        check_discount(self.gamma)

        sbox = _box(self.state_box, n, "state_box")
        ubox = _box(self.input_box, m, "input_box")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "R", _frozen(R))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "state_box", _frozen(sbox))
        object.__setattr__(self, "input_box", _frozen(ubox))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_gamma(self, gamma: float) -> "LinearQuadraticProblem":
        return replace(self, gamma=gamma)

    def dynamics(self, x, u):
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)

    def cost(self, x, u) -> float:
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        return float(x @ self.Q @ x + u @ self.R @ u)


def _box(box, dim: int, name: str) -> np.ndarray:
    # default analysis region: the unit box in every coordinate
    if box is None:
        return np.tile([-1.0, 1.0], (dim, 1))
    arr = np.asarray(box, dtype=float).reshape(-1, 2)
    if arr.shape != (dim, 2):
        raise ProblemError(f"expected {dim} intervals, got {arr.shape[0]}", name)
    if np.any(arr[:, 0] > arr[:, 1]) or not np.all(np.isfinite(arr)):
        raise ProblemError("intervals must be finite with lower <= upper", name)
    return arr


# -- scalar problems ---------------------------------------------------------

@dataclass(frozen=True)
class ScalarFamily:
    """``f = a*u*(1-x) + b*x`` and ``L = c1*u + c2*u*x + c3*(u-d)^2``."""

    a: float
    b: float
    c1: float
    c2: float
    c3: float
    d: float

    def dynamics(self, x, u):
        return self.a * u * (1.0 - x) + self.b * x

    def cost(self, x, u):
        return self.c1 * u + self.c2 * u * x + self.c3 * (u - self.d) ** 2

    def steady_input(self, x):
        """Closed-form ``u`` with ``f(x, u) = x``; NaN where singular."""
        x = np.asarray(x, dtype=float)
        den = self.a * (1.0 - x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den != 0.0, (1.0 - self.b) * x / np.where(den != 0.0, den, 1.0), np.nan)


@dataclass(frozen=True)
class ShiftedCost:
    """Stage cost ``base(x, u) - offset``."""

    base: Callable
    offset: float

    def __call__(self, x, u):
        return self.base(x, u) - self.offset


@dataclass(frozen=True)
class ScalarGridProblem:
    dynamics_fn: Callable
    cost_fn: Callable
    x_interval: tuple[float, float]
    u_interval: tuple[float, float]
    nx: int
    nu: int
    gamma: float
    family: Optional[ScalarFamily] = None
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        for name in ("x_interval", "u_interval"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
                raise ProblemError(f"must be a finite interval with lo < hi, got {(lo, hi)}", name)
            object.__setattr__(self, name, (lo, hi))
        for name in ("nx", "nu"):
            v = getattr(self, name)
            if int(v) != v or v < 2:
                raise ProblemError(f"must be an integer >= 2, got {v}", name)
            object.__setattr__(self, name, int(v))
        object.__setattr__(self, "gamma", check_discount(self.gamma))

        X, U = self.grid_pairs()
        with np.errstate(all="ignore"):
            F = np.asarray(self.dynamics_fn(X, U), dtype=float) * np.ones_like(X)
            L = np.asarray(self.cost_fn(X, U), dtype=float) * np.ones_like(X)
        if not np.all(np.isfinite(F)):
            raise ProblemError("dynamics is not finite on the grid", "dynamics")
        if not np.all(np.isfinite(L)):
            raise ProblemError("stage cost is not finite on the grid", "stage_cost")
        lo, hi = self.x_interval
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        if F.min() < lo - slack or F.max() > hi + slack:
            raise ProblemError(
                f"dynamics leaves the state interval: range [{F.min()}, {F.max()}] not in {self.x_interval}",
                "dynamics",
            )
        F.setflags(write=False)
        L.setflags(write=False)
        self._cache["F"] = F
        self._cache["L"] = L

    @classmethod
    def from_family(cls, family: ScalarFamily, x_interval, u_interval, nx, nu, gamma) -> "ScalarGridProblem":
        return cls(family.dynamics, family.cost, tuple(x_interval), tuple(u_interval), nx, nu, gamma, family)

    @property
    def x_grid(self) -> np.ndarray:
        return _frozen(np.linspace(*self.x_interval, self.nx))

    @property
    def u_grid(self) -> np.ndarray:
        return _frozen(np.linspace(*self.u_interval, self.nu))

    @property
    def dx(self) -> float:
        return (self.x_interval[1] - self.x_interval[0]) / (self.nx - 1)

    def grid_pairs(self):
        """State and input meshes of shape ``(nx, nu)``."""
        return np.meshgrid(self.x_grid, self.u_grid, indexing="ij")

    @property
    def successor_table(self) -> np.ndarray:
        """``f(x_i, u_j)`` for all grid pairs, shape ``(nx, nu)``."""
        return self._cache["F"]

    @property
    def cost_table(self) -> np.ndarray:
        return self._cache["L"]

    def with_gamma(self, gamma: float) -> "ScalarGridProblem":
        return replace(self, gamma=gamma)

    def with_cost(self, cost_fn: Callable) -> "ScalarGridProblem":
        # `family` is kept: only its dynamics part is consulted after a cost swap
        return replace(self, cost_fn=cost_fn)

    def shifted(self, offset: float) -> "ScalarGridProblem":
        return self.with_cost(ShiftedCost(self.cost_fn, float(offset)))

    def dynamics(self, x, u):
        return self.dynamics_fn(x, u)

    def cost(self, x, u):
        return self.cost_fn(x, u)

    def contains(self, x, u) -> bool:
        (xl, xh), (ul, uh) = self.x_interval, self.u_interval
        x = np.asarray(x)
        u = np.asarray(u)
        return bool(np.all((x >= xl) & (x <= xh) & (u >= ul) & (u <= uh)))


Problem = Union[LinearQuadraticProblem, ScalarGridProblem]


def evaluate_dynamics(problem: Problem, x, u, *, strict: bool = False):
    if isinstance(problem, LinearQuadraticProblem):
        if strict:
            _check_lq_box(problem, x, u)
        return problem.dynamics(x, u)
    if strict and not problem.contains(x, u):
        raise OutOfBoxError(f"(x={x}, u={u}) outside {problem.x_interval} x {problem.u_interval}")
    return problem.dynamics(x, u)


def evaluate_cost(problem: Problem, x, u, *, strict: bool = False):
    if isinstance(problem, LinearQuadraticProblem):
        if strict:
            _check_lq_box(problem, x, u)
        return problem.cost(x, u)
    if strict and not problem.contains(x, u):
        raise OutOfBoxError(f"(x={x}, u={u}) outside {problem.x_interval} x {problem.u_interval}")
    return problem.cost(x, u)


def _check_lq_box(problem: LinearQuadraticProblem, x, u) -> None:
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    sb, ub = problem.state_box, problem.input_box
    if np.any(x < sb[:, 0]) or np.any(x > sb[:, 1]) or np.any(u < ub[:, 0]) or np.any(u > ub[:, 1]):
        raise OutOfBoxError(f"(x={x}, u={u}) outside the analysis box")


# -- configuration files -----------------------------------------------------

_MATRIX = {"type": "array", "minItems": 1, "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_BOX = {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}}}

LQ_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"const": "linear_quadratic"},
        "A": _MATRIX,
        "B": _MATRIX,
        "Q": _MATRIX,
        "R": _MATRIX,
        "gamma": {"type": "number"},
        "state_box": _BOX,
        "input_box": _BOX,
    },
    "required": ["type", "A", "B", "Q", "R", "gamma"],
    "additionalProperties": False,
}

GRID_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"const": "scalar_grid"},
        "family": {
            "type": "object",
            "properties": {k: {"type": "number"} for k in ("a", "b", "c1", "c2", "c3", "d")},
            "required": ["a", "b", "c1", "c2", "c3", "d"],
            "additionalProperties": False,
        },
        "f_expr": {"type": "string"},
        "l_expr": {"type": "string"},
        "x_min": {"type": "number"},
        "x_max": {"type": "number"},
        "u_min": {"type": "number"},
        "u_max": {"type": "number"},
        "nx": {"type": "integer"},
        "nu": {"type": "integer"},
        "gamma": {"type": "number"},
    },
    "required": ["type", "x_min", "x_max", "u_min", "u_max", "nx", "nu", "gamma"],
    "additionalProperties": False,
    "oneOf": [{"required": ["family"]}, {"required": ["f_expr", "l_expr"]}],
}


def _validate(config: dict, schema: dict) -> None:
    try:
        jsonschema.validate(config, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or None
        raise ProblemError(f"schema violation: {exc.message}", where) from None


def problem_from_config(config: dict) -> Problem:
    if not isinstance(config, dict):
        raise ProblemError("configuration must be a JSON object")
    kind = config.get("type")
    if kind == "linear_quadratic":
        _validate(config, LQ_SCHEMA)
        return LinearQuadraticProblem(
            A=config["A"], B=config["B"], Q=config["Q"], R=config["R"], gamma=config["gamma"],
            state_box=config.get("state_box"), input_box=config.get("input_box"),
        )
    if kind == "scalar_grid":
        _validate(config, GRID_SCHEMA)
        xi = (config["x_min"], config["x_max"])
        ui = (config["u_min"], config["u_max"])
        if "family" in config:
            fam = ScalarFamily(**{k: float(v) for k, v in config["family"].items()})
            return ScalarGridProblem.from_family(fam, xi, ui, config["nx"], config["nu"], config["gamma"])
        try:
            f = Expression.parse(config["f_expr"])
        except ExpressionSyntaxError as exc:
            raise ProblemError(str(exc), "f_expr") from None
        try:
            L = Expression.parse(config["l_expr"])
        except ExpressionSyntaxError as exc:
            raise ProblemError(str(exc), "l_expr") from None
        return ScalarGridProblem(f, L, xi, ui, config["nx"], config["nu"], config["gamma"])
    raise ProblemError(f"unknown problem type {kind!r}", "type")


def load_problem(path) -> Problem:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemError(f"cannot read {path}: {exc.strerror}") from None
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"invalid JSON in {path}: {exc}") from None
    return problem_from_config(config)


# -- the two worked examples -------------------------------------------------

def lqr_example(gamma: float = 0.334) -> LinearQuadraticProblem:
    """Unstable 2-state system with identity input map and identity weights."""
    return LinearQuadraticProblem(
        A=[[2.0, 0.0], [1.0, 2.0]], B=np.eye(2), Q=np.eye(2), R=np.eye(2), gamma=gamma
    )


NONLINEAR_FAMILY = ScalarFamily(a=0.01, b=0.96, c1=-1.5, c2=2.0, c3=0.1, d=4.0)


def nonlinear_example(gamma: float = 0.9, nx: int = 401, nu: int = 401) -> ScalarGridProblem:
    return ScalarGridProblem.from_family(NONLINEAR_FAMILY, (0.0, 1.0), (0.0, 20.0), nx, nu, gamma)
