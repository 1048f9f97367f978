import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mveq import cli
from mveq.errors import DegenerateM

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMALL = ["--paths", "3000", "--steps", "50"]


def run(args):
    code = cli.main([str(a) for a in args])
    return code


def test_solve_writes_artifacts(tmp_path, capsys):
    code = run(["solve", CONFIGS / "mv_constant.toml", *SMALL, "--out", tmp_path])
    out = capsys.readouterr().out
    assert code == 0
    assert "phi*(0) = 0.303" in out
    for name in ("theta.csv", "phi.csv", "control.csv", "wealth.csv", "riccati.csv",
                 "diagnostics.json", "summary.txt", "operator/theta.npy"):
        assert (tmp_path / name).exists(), name
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["passed"] and diag["diagnostics"]["identities"]["P1-2P2^2"] <= 1e-10
    header = (tmp_path / "riccati.csv").read_text().splitlines()[0]
    assert header == "component,path,step,time,value"


def test_verify_consumes_operator_dump(tmp_path, capsys):
    assert run(["solve", CONFIGS / "mv_random_r.toml", *SMALL, "--out", tmp_path]) == 0
    code = run(["verify", CONFIGS / "mv_random_r.toml", *SMALL, "--out", tmp_path,
                "--operator", tmp_path])
    assert code == 0
    rows = (tmp_path / "quotients.csv").read_text().splitlines()
    assert rows[0].startswith("operator,probe,t,amount")
    assert len(rows) == 1 + 12 + 1
    code = run(["verify", CONFIGS / "mv_random_r.toml", "--paths", "3000", "--steps", "40",
                "--out", tmp_path, "--operator", tmp_path])
    assert code == 2
    assert "GridMismatch" in capsys.readouterr().err


def test_hedge_reports_variance_reduction(tmp_path, capsys):
    code = run(["hedge", CONFIGS / "hedge_linear.toml", *SMALL, "--out", tmp_path])
    out = capsys.readouterr().out
    assert code == 0
    assert "phi*(0) = 4.8" in out and "variance reduction factor" in out
    for name in ("lambda", "zeta", "theta", "phi", "pi"):
        assert (tmp_path / f"{name}.csv").exists()
    diag = json.loads((tmp_path / "diagnostics.json").read_text())["diagnostics"]
    assert diag["variance_reduction_factor"] >= 20


def test_compare_and_run(tmp_path):
    assert run(["compare", CONFIGS / "compare_deterministic_r.toml", *SMALL,
                "--out", tmp_path / "c"]) == 0
    table = (tmp_path / "c" / "compare.csv").read_text().splitlines()
    assert table[0] == "step,time,theta_sup,theta_l2,phi_sup,phi_l2" and len(table) == 52
    assert run(["run", CONFIGS / "general_lh.toml", *SMALL, "--out", tmp_path / "g"]) == 0
    assert (tmp_path / "g" / "quotients.csv").exists()


def test_failed_check_exits_one(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(
        'kind = "mean-variance"\ngamma = 0.5\n[scenario]\nr = 0.03\nb = 0.08\nsigma = 0.2\n'
        '[checks]\nphi0 = 0.5\n')
    assert run(["solve", cfg, *SMALL, "--out", tmp_path / "o"]) == 1
    assert "FAIL" in (tmp_path / "o" / "summary.txt").read_text()


def test_config_errors_exit_two(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('kind = "mean-variance"\ngamma = 0.5\n[scenario]\nr = 0.03\nb = 0.08\n')
    assert run(["solve", cfg, "--out", tmp_path]) == 2
    assert "scenario.sigma" in capsys.readouterr().err
    assert run(["solve", CONFIGS / "hedge_linear.toml", *SMALL, "--out", tmp_path]) == 2


def test_numerical_failure_exits_three(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise DegenerateM("|M| = 0 below 1e-08")

    monkeypatch.setattr(cli, "solve_mv_equilibrium", boom)
    assert run(["solve", CONFIGS / "mv_constant.toml", *SMALL, "--out", tmp_path]) == 3
    assert "DegenerateM" in capsys.readouterr().err


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "mveq.cli", "solve",
                          str(CONFIGS / "mv_constant.toml"), *SMALL, "--out", str(tmp_path)],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert "overall: PASS" in res.stdout


def test_operator_roundtrip(tmp_path):
    from mveq import EquilibriumOperator, simulate_brownian

    g = simulate_brownian(4, 3, 1.0, seed=0)
    op = EquilibriumOperator(np.ones((4, 4)), np.zeros((4, 1)), "hedging", g.W)
    cli.save_operator(tmp_path, op, g)
    back = cli.load_operator(tmp_path, g)
    np.testing.assert_array_equal(back.offset, g.W)
    assert back.kind == "hedging"
    with pytest.raises(Exception):
        cli.load_operator(tmp_path / "nowhere", g)
