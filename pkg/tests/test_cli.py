import csv
import hashlib
import json
import subprocess
import sys

import pytest

from discounted_empc import __version__
from discounted_empc.cli import parse_gammas, run, UsageError


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# command=")
    assert lines[1].startswith("# units: ")
    rows = list(csv.reader(lines[2:]))
    return lines[0], rows[0], rows[1:]


def test_thresholds_csv(configs, tmp_path):
    assert run(["lqr-thresholds", str(configs / "lq_example.json"), "--out", str(tmp_path)]) == 0
    meta, header, rows = read_csv(tmp_path / "thresholds.csv")
    assert header[:2] == ["criterion", "gamma_critical"]
    assert [r[0] for r in rows] == ["stabilizing", "lyapunov", "gaitsgory_c", "lambda_zero"]
    values = {r[0]: float(r[1]) for r in rows}
    assert values["stabilizing"] == pytest.approx(0.3109, abs=5e-4)
    assert values["lyapunov"] == pytest.approx(0.3342, abs=5e-4)
    assert values["gaitsgory_c"] == pytest.approx(0.846, abs=2e-3)
    digest = hashlib.sha256((configs / "lq_example.json").read_bytes()).hexdigest()
    assert f"config_sha256={digest}" in meta
    assert "seed=0" in meta and f"version={__version__}" in meta


def test_sweep_files(configs, tmp_path):
    code = run(["ss-sweep", str(configs / "scalar_example.json"), "--gammas", "0.5:0.52:0.01", "--out", str(tmp_path)])
    assert code == 0
    _, header, rows = read_csv(tmp_path / "fig1.csv")
    assert header == ["gamma", "x_s"]
    assert [r[0] for r in rows] == ["0.5", "0.51", "0.52"]
    _, header, rows = read_csv(tmp_path / "sweep.csv")
    assert header[:4] == ["gamma", "x_s", "u_s", "cost_tilde"]
    assert all(r[-1] == "true" for r in rows)


def test_dp_solve_table(configs, tmp_path):
    assert run(["dp-solve", str(configs / "scalar_example.json"), "--gamma", "0.9", "--out", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "value.csv")
    assert header == ["x", "V", "u_star"]
    assert len(rows) == 401
    summary = json.loads((tmp_path / "dp_summary.json").read_text())
    assert summary["residual"] <= summary["tol"]


def test_grid_overrides(configs, tmp_path):
    assert run(["dp-solve", str(configs / "scalar_example.json"), "--nx", "51", "--nu", "31", "--out", str(tmp_path)]) == 0
    _, _, rows = read_csv(tmp_path / "value.csv")
    assert len(rows) == 51


def test_sdsd_verify(configs, tmp_path):
    code = run(["sdsd-verify", str(configs / "scalar_example.json"), "--gamma", "0.9", "--expect-feasible",
                "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "sdsd.json").read_text())["reports"][0]
    assert report["margin_i"] >= 0 and report["margin_ii"] >= 0


def test_sdsd_verify_linear(configs, tmp_path):
    code = run(["sdsd-verify", str(configs / "lq_example.json"), "--gammas", "0.29:0.3:0.01", "--out", str(tmp_path)])
    assert code == 0
    _, header, rows = read_csv(tmp_path / "sdsd.csv")
    assert [r[-1] for r in rows] == ["false", "false"]
    assert run(["sdsd-verify", str(configs / "lq_example.json"), "--gamma", "0.29", "--expect-feasible",
                "--out", str(tmp_path)]) == 1


def test_certify_exit_codes(configs, tmp_path):
    cfg = str(configs / "lq_example.json")
    assert run(["lqr-certify", cfg, "--out", str(tmp_path), "--expect-feasible"]) == 0
    doc = json.loads((tmp_path / "certificate.json").read_text())
    assert doc["feasible"] is True
    assert len(doc["Lambda"]) == 2
    assert run(["lqr-certify", cfg, "--gamma", "0.29", "--out", str(tmp_path)]) == 0
    assert run(["lqr-certify", cfg, "--gamma", "0.29", "--expect-feasible", "--out", str(tmp_path)]) == 1


def test_simulate_outputs(configs, tmp_path):
    assert run(["simulate", str(configs / "scalar_example.json"), "--x0", "0.1", "--out", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "trajectory.csv")
    assert header == ["k", "x", "u", "distance", "V_hat"]
    assert len(rows) == 501
    info = json.loads((tmp_path / "simulation.json").read_text())
    assert info["converged"] and not info["decrease_violated"]
    _, header, _ = read_csv(tmp_path / "decrease.csv")
    assert header == ["k", "decrease", "bound"]


def test_simulate_linear(configs, tmp_path):
    assert run(["simulate", str(configs / "lq_example.json"), "--gamma", "0.29", "--steps", "50",
                "--out", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "simulation.json").read_text())
    assert not info["converged"] and info["decrease_violated"]


def test_equivalence_check(configs, tmp_path):
    assert run(["equivalence-check", str(configs / "scalar_example.json"), "--out", str(tmp_path)]) == 0
    _, _, rows = read_csv(tmp_path / "equivalence.csv")
    assert {r[0] for r in rows} >= {"value_shift", "hat_policy_mismatches", "tilde_policy_mismatches", "telescopic"}
    assert all(r[3] == "true" for r in rows)


@pytest.mark.parametrize(
    "argv",
    [
        ["dp-solve", "missing.json", "--gamma", "0.9"],
        ["frobnicate", "x.json"],
        ["dp-solve"],
        ["dp-solve", "{cfg42}", "--bogus"],
        ["ss-sweep", "{cfg42}", "--gammas", "0.5:0.4:0.01"],
        ["ss-sweep", "{cfg42}", "--gammas", "a:b"],
        ["lqr-thresholds", "{cfg42}"],
        ["dp-solve", "{cfg41}"],
        ["dp-solve", "{cfg41}", "--nx", "11"],
        ["dp-solve", "{cfg42}", "--nx", "1"],
        ["dp-solve", "{cfg42}", "--gamma", "1.5"],
        ["dp-solve", "{cfg42}", "--tol", "-1"],
        ["simulate", "{cfg42}", "--x0", "2.0"],
        ["simulate", "{cfg41}", "--x0", "1.0"],
    ],
)
def test_usage_errors(configs, tmp_path, argv, capsys):
    argv = [a.format(cfg41=configs / "lq_example.json", cfg42=configs / "scalar_example.json") for a in argv]
    assert run(argv + ["--out", str(tmp_path)] if len(argv) > 1 else argv) == 2


def test_invalid_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"type": "linear_quadratic", "A": [[1]], "B": [[1]], "Q": [[1]], "R": [[0]],
                               "gamma": 0.5}))
    assert run(["lqr-certify", str(bad), "--out", str(tmp_path)]) == 2


def test_parse_gammas():
    g = parse_gammas("0.2:0.99:0.01")
    assert len(g) == 80 and g[0] == 0.2 and g[-1] == 0.99 and g[7] == 0.27
    assert parse_gammas("0.5:0.5:0.1") == [0.5]
    with pytest.raises(UsageError):
        parse_gammas("0.1:0.2:0")


COMMANDS = [
    ("lqr-thresholds", "lq_example.json", []),
    ("lqr-certify", "lq_example.json", ["--seed", "4"]),
    ("dp-solve", "scalar_example.json", ["--nx", "101", "--nu", "101"]),
    ("sdsd-verify", "scalar_example.json", ["--nx", "101", "--nu", "101", "--gammas", "0.5:0.6:0.1"]),
    ("ss-sweep", "scalar_example.json", ["--nx", "101", "--nu", "101", "--gammas", "0.3:0.5:0.1"]),
    ("simulate", "scalar_example.json", ["--nx", "101", "--nu", "101"]),
    ("simulate", "lq_example.json", []),
    ("equivalence-check", "scalar_example.json", ["--nx", "101", "--nu", "101"]),
]


@pytest.mark.parametrize("cmd, cfg, extra", COMMANDS)
def test_byte_determinism(configs, tmp_path, cmd, cfg, extra):
    outs, codes = [], []
    for k in range(2):
        d = tmp_path / f"run{k}"
        # a failed identity on a coarse grid still writes its report
        codes.append(run([cmd, str(configs / cfg), "--out", str(d), *extra]))
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert codes[0] == codes[1] and codes[0] in (0, 1)
    assert outs[0] and outs[0] == outs[1]


def test_module_entry_point(configs, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "discounted_empc", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == __version__
    proc = subprocess.run([sys.executable, "-m", "discounted_empc", "dp-solve", str(tmp_path / "none.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
