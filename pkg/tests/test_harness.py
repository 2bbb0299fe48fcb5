"""Manufactured fields, run drivers, report emission, and the CLI."""

import json

import numpy as np
import pytest

from mimax import cli
from mimax import harness as mh
from mimax.manufactured import ManufacturedSolution, exact_fields


def _fd_curl(func, point, t, h=1e-5):
    out = np.zeros(3)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        dp = np.array(point, dtype=float)
        dm = dp.copy()
        dp[i] += h
        dm[i] -= h
        d_j = (func(dp, t)[j] - func(dm, t)[j]) / (2 * h)
        dp = np.array(point, dtype=float)
        dm = dp.copy()
        dp[j] += h
        dm[j] -= h
        d_i = (func(dp, t)[i] - func(dm, t)[i]) / (2 * h)
        out[k] = d_j - d_i
    return out


def _fd_div(func, point, t, h=1e-5):
    total = 0.0
    for k in range(3):
        dp = np.array(point, dtype=float)
        dm = dp.copy()
        dp[k] += h
        dm[k] -= h
        total += (func(dp, t)[k] - func(dm, t)[k]) / (2 * h)
    return total


def _fd_dt(func, point, t, h=1e-6):
    return (np.asarray(func(point, t + h)) - np.asarray(func(point, t - h))) / (2 * h)


def test_pressure_identically_zero(rng):
    ms = ManufacturedSolution()
    pts = rng.uniform(-0.5, 1.5, size=(40, 3))
    assert np.abs(ms.p(pts, rng.uniform(0, 2))).max() == 0.0


def test_fields_vanish_at_cube_center():
    e, b, p, j = exact_fields([0.5, 0.5, 0.5], 0.0)
    assert np.abs(e).max() == 0.0
    assert np.abs(b).max() == 0.0
    assert np.abs(j).max() == 0.0


def test_golden_values_quarter_point():
    # frozen from a 40-digit evaluation of the closed forms
    e, b, p, j = exact_fields([0.25, 0.25, 0.25], 0.0)
    np.testing.assert_allclose(
        e, [-0.11253953951963826, 0.11253953951963826, 0.0], rtol=1e-15
    )
    np.testing.assert_allclose(
        b, [-0.35355339059327379, -0.35355339059327379, 0.70710678118654757],
        rtol=1e-15,
    )
    np.testing.assert_allclose(
        j, [-3.4447017431384128, 3.4447017431384128, 0.0], rtol=1e-15
    )
    assert p == 0.0


def test_pde_residuals_by_finite_differences(rng):
    ms = ManufacturedSolution()
    for _ in range(6):
        x = rng.uniform(0.05, 0.95, size=3)
        t = rng.uniform(0.1, 1.0)
        faraday = _fd_dt(ms.b, x, t) + _fd_curl(ms.e, x, t)
        assert np.abs(faraday).max() <= 1e-6
        ampere = (
            _fd_dt(ms.e, x, t) - _fd_curl(ms.b, x, t) + np.asarray(ms.j(x, t))
        )
        assert np.abs(ampere).max() <= 1e-6
        gauss = _fd_div(ms.e, x, t)
        assert abs(gauss) <= 1e-6
        assert abs(_fd_div(ms.b, x, t)) <= 1e-6
        assert abs(_fd_div(ms.j, x, t)) <= 1e-6


def test_run_config_roundtrip():
    config = mh.RunConfig(refine=1, tau=0.05, steps=3, precond="su",
                          method="fem", out="x.json")
    back = mh.RunConfig.from_json(config.to_json())
    assert back == config


def test_run_config_validation():
    with pytest.raises(ValueError):
        mh.RunConfig(mesh="torus")
    with pytest.raises(ValueError):
        mh.RunConfig(tau=-1.0)
    with pytest.raises(ValueError):
        mh.RunConfig(precond="ilu")


def test_emit_csv_header_only(tmp_path):
    path = tmp_path / "empty.csv"
    mh.emit_csv(path, [])
    assert path.read_text() == mh.CSV_HEADER + "\n"


def test_emit_csv_row_fields(tmp_path):
    cell = {
        "tau": 0.1, "h": 0.5, "iters_mean": 3, "iters_raw": 3.25,
        "errE": 0.1, "errB": 0.2, "divB_max": 1e-15,
        "energy_drift": 1e-12, "seconds_per_step": 0.0,
    }
    path = tmp_path / "one.csv"
    mh.emit_csv(path, [cell])
    lines = path.read_text().splitlines()
    assert lines[0] == mh.CSV_HEADER
    assert lines[1].startswith("0.1,0.5,3,3.25")


def test_deterministic_reports_byte_identical(tmp_path):
    config = mh.RunConfig(refine=1, tau=0.1, steps=2)
    rep1 = mh.run_solve(config)
    rep2 = mh.run_solve(config)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    mh.emit_json(p1, rep1)
    mh.emit_json(p2, rep2)
    assert p1.read_bytes() == p2.read_bytes()


def test_run_solve_report_schema():
    config = mh.RunConfig(refine=1, tau=0.1, steps=2)
    rep = mh.run_solve(config)
    assert {"step", "iterations", "residual", "divB_max", "energy"} <= set(
        rep["steps"][0]
    )
    assert {"errE", "errB"} <= set(rep["errors"])
    assert rep["steps"][0]["iterations"] >= 1
    assert rep["nonconverged_steps"] == 0


def test_run_solve_free_source_conserves_energy():
    config = mh.RunConfig(refine=1, tau=0.1, steps=5, source="free",
                          precond="exact")
    rep = mh.run_solve(config)
    assert rep["energy_drift"] <= 1e-9


def test_run_convergence_structure():
    table = mh.run_convergence(refines=(0, 1), tau=0.05, steps=2,
                               methods=("mfd",))
    series = table["results"][0]["series"]
    assert "ratioE" in series[1] and "ratioB" in series[1]
    assert series[1]["errE"] < series[0]["errE"]


def test_sweep_table_layout():
    sweep = mh.run_sweep(taus=(0.2, 0.1), refines=(0, 1), precond="lsu",
                         final_time=0.4)
    text = mh.sweep_table_csv(sweep)
    lines = text.splitlines()
    assert lines[0] == "tau,h=1/1,h=1/2"
    assert len(lines) == 3
    assert all(c["iters_mean"] >= 1 for c in sweep["cells"])


def test_get_workspace_caches():
    ws1 = mh.get_workspace("cube-pyramids", 1)
    ws2 = mh.get_workspace("cube-pyramids", 1)
    assert ws1 is ws2
    assert ws1.nondegenerate and not ws1.substituted


def test_cli_mesh_info(tmp_path, capsys):
    out = tmp_path / "info.json"
    code = cli.main(["mesh-info", "--mesh", "cube-pyramids", "--refine", "1",
                     "--out", str(out)])
    assert code == 0
    info = json.loads(out.read_text())
    assert (info["vertices"], info["edges"], info["faces"]) == (65, 304, 432)
    assert info["nondegenerate"] is True
    assert info["exact_sequence_residuals"]["curl_grad"] < 1e-10


def test_cli_check_equivalence(tmp_path):
    out = tmp_path / "eq.json"
    code = cli.main(["check-equivalence", "--mesh", "bcc", "--refine", "0",
                     "--tau", "0.025", "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["passed"] is True


def test_cli_solve_and_exit_code(tmp_path):
    out = tmp_path / "run.json"
    code = cli.main(["solve", "--refine", "1", "--tau", "0.1", "--steps", "2",
                     "--precond", "lsu", "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["config"]["precond"] == "lsu"
    assert len(rep["steps"]) == 2
    assert rep["seconds_per_step"] == 0.0  # deterministic default


def test_cli_solve_nonconvergence_exit_code(tmp_path):
    # starve the solver: no preconditioner and a one-iteration budget
    out = tmp_path / "bad.json"
    code = cli.main(["solve", "--refine", "1", "--tau", "0.1", "--steps", "1",
                     "--precond", "none", "--outer-tol", "1e-13",
                     "--restart", "1", "--out", str(out)])
    rep = json.loads(out.read_text())
    if rep["nonconverged_steps"]:
        assert code == 1
    else:
        assert code == 0


def test_cli_sweep_writes_table_and_json(tmp_path):
    out = tmp_path / "table.csv"
    code = cli.main(["sweep", "--taus", "0.2", "--refines", "0,1",
                     "--final-time", "0.2", "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines()[0] == "tau,h=1/1,h=1/2"
    sweep = json.loads((tmp_path / "table.csv.json").read_text())
    assert sweep["precond"] == "lsu"
    assert all(c["seconds_per_step"] == 0.0 for c in sweep["cells"])


def test_cli_timing(tmp_path):
    out = tmp_path / "timing.json"
    code = cli.main(["timing", "--refines", "0,1", "--steps", "2",
                     "--out", str(out)])
    assert code == 0
    timing = json.loads(out.read_text())
    assert len(timing["rows"]) == 2
    assert timing["rows"][0]["seconds_per_step"] > 0.0


def test_cli_converge(tmp_path):
    out = tmp_path / "conv.json"
    code = cli.main(["converge", "--refines", "0,1", "--tau", "0.05",
                     "--steps", "2", "--methods", "mfd", "--out", str(out)])
    assert code == 0
    table = json.loads(out.read_text())
    assert table["results"][0]["method"] == "mfd"
