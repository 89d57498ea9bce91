"""Command-line driver: ``discounted-empc COMMAND CONFIG [options]``.

Every command writes its artifacts into ``--out`` (default ``out``). CSV
files start with a ``#`` metadata line (command, config sha256, seed, tool
version, options) and a ``# units:`` line, followed by the column header.
Floats are written with ``repr`` so files round-trip exactly and are
byte-identical between runs.

Exit codes: 0 success, 1 computation error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import dissipativity as diss
from . import dp
from .certificate import (
    BOUNDARY_EPSILON,
    CertificateInfeasible,
    QuadraticStorage,
    lambda_zero_threshold,
    synthesize_certificate,
    verify_certificate,
)
from .lqr import (
    BISECTION_TOL,
    BracketingError,
    RiccatiDivergenceError,
    gaitsgory_c_threshold,
    lyapunov_threshold,
    solve_dare,
    stabilizing_threshold,
)
from .model import LinearQuadraticProblem, ProblemError, ScalarGridProblem, load_problem
from .sim import RangeExitError, convergence_metrics, simulate
from .steady_state import SteadyStateError, sweep_gamma

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2

DEFAULT_SWEEP = "0.2:0.99:0.01"
SWEEP_X0 = 0.5
SWEEP_STEPS = 2000
EQUIVALENCE_X0 = 0.1

COMMANDS = (
    "lqr-thresholds",
    "lqr-certify",
    "dp-solve",
    "sdsd-verify",
    "ss-sweep",
    "simulate",
    "equivalence-check",
)


class UsageError(Exception):
    pass


class ComputationError(Exception):
    pass


def parse_gammas(text: str) -> list[float]:
    """``lo:hi:step`` to the inclusive list ``lo, lo+step, ...`` (up to ``hi``)."""
    try:
        lo, hi, step = (float(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"--gammas expects lo:hi:step, got {text!r}") from None
    if not (step > 0 and lo <= hi) or not all(map(math.isfinite, (lo, hi, step))):
        raise UsageError(f"--gammas needs step > 0 and lo <= hi, got {text!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    # rounding keeps 0.2 + 7*0.01 printing as 0.27
    return [round(lo + k * step, 12) for k in range(n)]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no inf/nan
        return f if math.isfinite(f) else repr(f)
    return obj


class Output:
    def __init__(self, out_dir: Path, command: str, config_hash: str, seed: int, options: dict):
        self.dir = out_dir
        self.meta = {"command": command, "config_sha256": config_hash, "seed": seed, "version": __version__}
        self.meta.update({k: v for k, v in sorted(options.items()) if v is not None})
        self.written: list[Path] = []

    def _meta_line(self) -> str:
        return "# " + " ".join(f"{k}={_fmt(v)}" for k, v in self.meta.items())

    def write_csv(self, name: str, columns: Sequence[str], units: Sequence[str], rows) -> Path:
        buf = io.StringIO()
        buf.write(self._meta_line() + "\n")
        buf.write("# units: " + ",".join(units) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        return self._write(name, buf.getvalue())

    def write_json(self, name: str, payload: dict) -> Path:
        doc = {"meta": self.meta, **payload}
        return self._write(name, json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")

    def _write(self, name: str, text: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        self.written.append(path)
        return path


# -- argument handling -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="problem JSON file")
    common.add_argument("--gamma", type=float, help="discount factor override")
    common.add_argument("--gammas", help="discount factor list lo:hi:step")
    common.add_argument("--tol", type=float, help="tolerance override (bisection width or value-iteration residual)")
    common.add_argument("--nx", type=int, help="state grid size override")
    common.add_argument("--nu", type=int, help="input grid size override")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--out", default="out", help="output directory (default ./out)")
    common.add_argument("--expect-feasible", action="store_true",
                        help="exit 1 when a certificate or SDSD check fails")
    common.add_argument("--x0", help="initial state; comma-separated for vector states")
    common.add_argument("--steps", type=int, default=500, help="rollout length (default 500)")

    parser = argparse.ArgumentParser(prog="discounted-empc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "lqr-thresholds": "critical discount factors of a linear-quadratic problem",
        "lqr-certify": "synthesize and verify a quadratic SDSD certificate",
        "dp-solve": "value iteration; exports x, V, u_star",
        "sdsd-verify": "check both dissipation conditions",
        "ss-sweep": "optimal steady state over a discount-factor sweep",
        "simulate": "closed-loop rollout with distance and V_hat series",
        "equivalence-check": "value shift, telescopic and policy-equivalence identities",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _load(args) -> tuple:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    data = path.read_bytes()
    problem = load_problem(path)
    if args.gamma is not None:
        problem = problem.with_gamma(args.gamma)
    if args.nx is not None or args.nu is not None:
        if not isinstance(problem, ScalarGridProblem):
            raise UsageError("--nx/--nu apply to scalar_grid problems only")
        problem = replace(problem, nx=args.nx or problem.nx, nu=args.nu or problem.nu)
    if args.tol is not None and not (args.tol > 0 and math.isfinite(args.tol)):
        raise UsageError("--tol must be positive")
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    return problem, hashlib.sha256(data).hexdigest()


def _require(problem, cls, command):
    if not isinstance(problem, cls):
        kind = "linear_quadratic" if cls is LinearQuadraticProblem else "scalar_grid"
        raise UsageError(f"{command} needs a {kind} problem")


def _gamma_list(args, problem) -> list[float]:
    if args.gammas is not None and args.gamma is not None:
        raise UsageError("--gamma and --gammas are mutually exclusive")
    if args.gammas is not None:
        gs = parse_gammas(args.gammas)
    else:
        gs = [problem.gamma]
    for g in gs:
        if not 0.0 < g < 1.0:
            raise UsageError(f"discount factors must lie in (0, 1), got {g}")
    return gs


def _x0(args, problem, default):
    if args.x0 is None:
        return default
    try:
        vals = [float(v) for v in args.x0.split(",")]
    except ValueError:
        raise UsageError(f"--x0 must be numeric, got {args.x0!r}") from None
    if isinstance(problem, LinearQuadraticProblem):
        if len(vals) != problem.n:
            raise UsageError(f"--x0 needs {problem.n} components")
        return np.array(vals)
    if len(vals) != 1:
        raise UsageError("--x0 must be a scalar for scalar_grid problems")
    lo, hi = problem.x_interval
    if not lo <= vals[0] <= hi:
        raise UsageError(f"--x0 outside the state interval {problem.x_interval}")
    return vals[0]


# -- commands -----------------------------------------------------------------

def cmd_lqr_thresholds(problem, args, out: Output):
    _require(problem, LinearQuadraticProblem, "lqr-thresholds")
    tol = args.tol or BISECTION_TOL
    results = [f(problem, tol) for f in (stabilizing_threshold, lyapunov_threshold,
                                         gaitsgory_c_threshold, lambda_zero_threshold)]
    rows = [(r.criterion, r.gamma_critical, r.bracket[0], r.bracket[1], r.at_floor) for r in results]
    out.write_csv("thresholds.csv", ["criterion", "gamma_critical", "bracket_lo", "bracket_hi", "at_floor"],
                  ["-", "-", "-", "-", "bool"], rows)
    for r in results:
        print(f"{r.criterion}: {r.gamma_critical:.6f}")


def _certify(problem: LinearQuadraticProblem, seed: int):
    riccati = solve_dare(problem)
    try:
        storage = synthesize_certificate(problem, seed=seed, riccati=riccati)
        found = True
    except CertificateInfeasible as exc:
        storage, found = exc.storage, False
    report = verify_certificate(problem, storage, BOUNDARY_EPSILON, riccati)
    return riccati, storage, found and report.feasible, report


def cmd_lqr_certify(problem, args, out: Output):
    _require(problem, LinearQuadraticProblem, "lqr-certify")
    riccati, storage, feasible, report = _certify(problem, args.seed)
    out.write_json("certificate.json", {
        "gamma": problem.gamma,
        "feasible": feasible,
        "Lambda": storage.Lambda,
        "P": riccati.P,
        "K": riccati.K,
        "report": report.to_dict(),
    })
    print(f"gamma={problem.gamma} feasible={_fmt(feasible)} margin_i={report.margin_i:.6g} "
          f"margin_ii={report.margin_ii:.6g}")
    if args.expect_feasible and not feasible:
        raise ComputationError(f"no SDSD certificate at gamma={problem.gamma}")


def cmd_dp_solve(problem, args, out: Output):
    _require(problem, ScalarGridProblem, "dp-solve")
    tol = args.tol if args.tol is not None else dp.default_tolerance(problem)
    V, policy = dp.value_iteration(problem, tol=tol)
    out.write_csv("value.csv", ["x", "V", "u_star"], ["state", "cost", "input"], dp.export_csv_rows(V, policy))
    out.write_json("dp_summary.json", {
        "gamma": problem.gamma, "nx": problem.nx, "nu": problem.nu,
        "tol": tol, "iterations": V.iterations, "residual": V.residual,
    })
    print(f"converged in {V.iterations} sweeps, residual {V.residual:.3e} (tol {tol:.3e})")


def cmd_sdsd_verify(problem, args, out: Output):
    gammas = _gamma_list(args, problem)
    rows, reports, all_ok = [], [], True
    if isinstance(problem, LinearQuadraticProblem):
        for g in gammas:
            _, storage, feasible, rep = _certify(problem.with_gamma(g), args.seed)
            all_ok &= feasible
            rows.append((g, rep.margin_i, rep.margin_ii, rep.margin_phat, feasible))
            reports.append({"gamma": g, "Lambda": storage.Lambda, **rep.to_dict(), "feasible": feasible})
        cols = ["gamma", "margin_i", "margin_ii", "margin_phat", "feasible"]
        units = ["-", "cost", "cost", "cost", "bool"]
    else:
        for g in gammas:
            p = problem.with_gamma(g)
            a = diss.analyze_grid(p, tol=args.tol)
            rep = diss.check_sdsd_on_grid(a.problem_bar, a.storage, a.V_bar)
            all_ok &= rep.feasible
            rows.append((g, a.steady.x_s, a.storage.gradient, rep.margin_i, rep.margin_ii,
                         rep.witness_i[0], rep.witness_i[1], rep.witness_ii[0], rep.witness_ii[1],
                         rep.max_epsilon_i, rep.max_epsilon_ii, rep.feasible))
            reports.append({"gamma": g, "x_s": a.steady.x_s, "u_s": a.steady.u_s,
                            "storage": {"x_s": a.storage.x_s, "gradient": a.storage.gradient,
                                        "curvature": a.storage.curvature},
                            **rep.to_dict()})
        cols = ["gamma", "x_s", "storage_gradient", "margin_i", "margin_ii", "witness_i_x", "witness_i_u",
                "witness_ii_x", "witness_ii_u", "max_epsilon_i", "max_epsilon_ii", "feasible"]
        units = ["-", "state", "cost/state", "cost", "cost", "state", "input", "state", "input",
                 "cost/state^2", "cost/state^2", "bool"]
    out.write_csv("sdsd.csv", cols, units, rows)
    out.write_json("sdsd.json", {"reports": reports})
    for r in rows:
        print(f"gamma={r[0]} feasible={_fmt(r[-1])}")
    if args.expect_feasible and not all_ok:
        raise ComputationError("SDSD conditions fail for at least one discount factor")


def cmd_ss_sweep(problem, args, out: Output):
    _require(problem, ScalarGridProblem, "ss-sweep")
    if args.gamma is not None:
        gammas = _gamma_list(args, problem)
    else:
        gammas = parse_gammas(args.gammas or DEFAULT_SWEEP)
        for g in gammas:
            if not 0.0 < g < 1.0:
                raise UsageError(f"discount factors must lie in (0, 1), got {g}")
    x0 = _x0(args, problem, SWEEP_X0)
    rows = []
    for r in sweep_gamma(problem, gammas, tol=args.tol):
        p = problem.with_gamma(r.gamma)
        x_sim = float(simulate(p, r.policy, x0, SWEEP_STEPS).states[-1])
        gap = abs(x_sim - r.x_s) / problem.dx
        rows.append((r.gamma, r.x_s, r.u_s, r.cost_tilde, x_sim, gap, gap <= 2.0))
    out.write_csv("sweep.csv", ["gamma", "x_s", "u_s", "cost_tilde", "x_sim", "sim_gap_cells", "sim_agrees"],
                  ["-", "state", "input", "cost", "state", "cells", "bool"], rows)
    out.write_csv("fig1.csv", ["gamma", "x_s"], ["-", "state"], [(r[0], r[1]) for r in rows])
    print(f"{len(rows)} discount factors, x_s in [{min(r[1] for r in rows):.5f}, {max(r[1] for r in rows):.5f}]")


def cmd_simulate(problem, args, out: Output):
    N = args.steps
    if isinstance(problem, LinearQuadraticProblem):
        x0 = _x0(args, problem, np.ones(problem.n))
        riccati, storage, feasible, _ = _certify(problem, args.seed)
        if not feasible:
            storage = QuadraticStorage.zero(problem.n)
        traj = simulate(problem, riccati, x0, N)
        Phat = riccati.P + storage.Lambda
        vhat = np.einsum("ki,ij,kj->k", traj.states, Phat, traj.states)
        dec = diss.lyapunov_decrease_check(problem, storage, riccati, None, x0, N)
        metrics = convergence_metrics(traj, np.zeros(problem.n))
        cols = ["k"] + [f"x{i + 1}" for i in range(problem.n)] + [f"u{j + 1}" for j in range(problem.m)]
        cols += ["distance", "V_hat"]
        units = ["step"] + ["state"] * problem.n + ["input"] * problem.m + ["state", "cost"]
        rows = []
        for k in range(N + 1):
            u = traj.inputs[k] if k < N else [math.nan] * problem.m
            rows.append([k, *traj.states[k], *u, traj.distances[k], vhat[k]])
        x_s = [0.0] * problem.n
    else:
        x0 = _x0(args, problem, SWEEP_X0)
        a = diss.analyze_grid(problem, tol=args.tol)
        traj = simulate(problem, a.policy, x0, N, x_s=a.steady.x_s)
        vhat = a.V_bar(traj.states) + a.storage(traj.states)
        dec = diss.lyapunov_decrease_check(problem, a.storage, a.V_bar, a.policy, x0, N)
        metrics = convergence_metrics(traj, a.steady.x_s, grid_dx=problem.dx)
        cols = ["k", "x", "u", "distance", "V_hat"]
        units = ["step", "state", "input", "state", "cost"]
        rows = [[k, traj.states[k], traj.inputs[k] if k < N else math.nan, traj.distances[k], vhat[k]]
                for k in range(N + 1)]
        x_s = a.steady.x_s
    out.write_csv("trajectory.csv", cols, units, rows)
    out.write_csv("decrease.csv", ["k", "decrease", "bound"], ["step", "cost", "cost"],
                  [(k, d, b) for k, (d, b) in enumerate(zip(dec.decreases, dec.bounds))])
    out.write_json("simulation.json", {
        "gamma": problem.gamma, "x0": x0, "x_s": x_s, "steps": N,
        "converged": metrics.converged, "final_distance": metrics.final_distance,
        "decay_ratio": metrics.decay_ratio,
        "decrease_worst_violation": dec.worst_violation, "decrease_slack": dec.slack,
        "decrease_violated": dec.violated,
    })
    print(f"converged={_fmt(metrics.converged)} final_distance={metrics.final_distance:.3e}")


def cmd_equivalence_check(problem, args, out: Output):
    N = args.steps
    rows = []
    if isinstance(problem, LinearQuadraticProblem):
        riccati = solve_dare(problem)
        x0 = _x0(args, problem, np.ones(problem.n))
        x0 = np.asarray(x0, float)
        res = diss.telescopic_check(problem, riccati, None, x0, N)
        v0 = float(x0 @ riccati.P @ x0)
        rows.append(("telescopic", res, 1e-3 * (1 + abs(v0))))
    else:
        a = diss.analyze_grid(problem, tol=args.tol)
        V_hat, pi_hat = diss.value_iteration_hat(a.problem_bar, a.storage, tol=args.tol)
        shift = diss.check_value_shift(a.problem_bar, a.storage, a.V_bar, V_hat)
        rows.append(("value_shift", shift, 10 * diss.value_shift_slack(a.problem_bar, a.storage)))
        mism = int(np.count_nonzero(pi_hat.indices != a.policy.indices))
        rows.append(("hat_policy_mismatches", mism, 0))
        tilde = diss.tilde_policy(a.problem_bar, a.V_bar, horizon=1)
        rows.append(("tilde_policy_mismatches", int(np.count_nonzero(tilde.indices != a.policy.indices)), 0))
        x = _x0(args, problem, EQUIVALENCE_X0)
        res = diss.telescopic_check(a.problem_bar, a.V_bar, a.policy, x, N)
        rows.append(("telescopic", res, 1e-3 * (1 + abs(a.V_bar(x)))))
    table = [(name, value, bound, value <= bound) for name, value, bound in rows]
    out.write_csv("equivalence.csv", ["check", "value", "bound", "passes"], ["-", "mixed", "mixed", "bool"], table)
    for name, value, bound, ok in table:
        print(f"{name}: {_fmt(value)} (bound {_fmt(bound)}) {'PASS' if ok else 'FAIL'}")
    if not all(t[3] for t in table):
        raise ComputationError("an equivalence identity failed")


HANDLERS = {
    "lqr-thresholds": cmd_lqr_thresholds,
    "lqr-certify": cmd_lqr_certify,
    "dp-solve": cmd_dp_solve,
    "sdsd-verify": cmd_sdsd_verify,
    "ss-sweep": cmd_ss_sweep,
    "simulate": cmd_simulate,
    "equivalence-check": cmd_equivalence_check,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage and 0 after --help/--version
        return int(exc.code or 0)
    try:
        problem, digest = _load(args)
        options = {"gamma": args.gamma, "gammas": args.gammas, "tol": args.tol, "nx": args.nx,
                   "nu": args.nu, "x0": args.x0}
        if args.command in ("simulate", "equivalence-check"):
            options["steps"] = args.steps
        out = Output(Path(args.out), args.command, digest, args.seed, options)
        HANDLERS[args.command](problem, args, out)
    except (UsageError, ProblemError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ComputationError, CertificateInfeasible, dp.ConvergenceError, RiccatiDivergenceError,
            BracketingError, RangeExitError, SteadyStateError, dp.GridRangeError) as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
