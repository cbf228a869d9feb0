import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from pydantic import ValidationError

from slsmpc.cli import run
from slsmpc.experiments import (ExperimentConfig, Planner, cmd_bench, cmd_feasmap, cmd_invset, cmd_simulate,
                                default_config_path, feasmap_grid, load_config, spawn_rngs)
from slsmpc.polytope import Polytope


def _data(cfg, **kw):
    d = cfg.model_dump(mode="json")
    d.update(kw)
    return d


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _write_cfg(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_shipped_config(cfg):
    assert cfg.model.A == [[1.0, 1.0], [0.0, 1.0]] and cfg.model.B == [[0.5], [1.0]]
    assert (cfg.model.eps_A, cfg.model.eps_B, cfg.model.sigma_w) == (0.02, 0.05, 0.1)
    assert cfg.cost.R == [[0.1]] and cfg.rng == "numpy.PCG64/1"
    assert len(cfg.config_hash()) == 16
    assert cfg.with_overrides(seed=3).config_hash() != cfg.config_hash()
    assert cfg.with_overrides(seed=None).config_hash() == cfg.config_hash()


def test_config_validation(cfg):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(_data(cfg, unknown=1))
    bad = _data(cfg)
    bad["constraints"]["F_u"] = [[1.0, 0.0]]
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(bad)
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(_data(cfg, rng="mt19937"))
    bad = _data(cfg)
    bad["search"]["ranges"] = [[0.0, 10.0], [5.0, 1.0], [0.0, 1.0]]
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(bad)


def test_rng_streams_are_reproducible():
    a = [g.random(3) for g in spawn_rngs(5, 4)]
    b = [g.random(3) for g in spawn_rngs(5, 4)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


def test_invset_file(cfg, tmp_path):
    summary = cmd_invset(cfg, tmp_path)
    assert not summary["empty"] and summary["facets"] == summary["vertices"]
    rec = json.loads((tmp_path / "invset.json").read_text())
    XT = Polytope.from_json(rec["polytope"])
    assert rec["config_hash"] == cfg.config_hash() and rec["converged"]
    assert len(rec["trace"]) == rec["iterations"]
    assert XT.contains([-7.0, -2.0]) and not XT.contains([9.9, 9.9])


def test_invset_degenerate_input_exits_infeasible(cfg, tmp_path):
    d = _data(cfg)
    d["model"]["A"] = [[1.5, 0.0], [0.0, 1.5]]
    d["constraints"]["b_u"] = [0.0, 0.0]
    code = run(["invset", "--config", _write_cfg(tmp_path, d), "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_errors(tmp_path, capsys):
    assert run(["invset", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1
    (tmp_path / "bad.json").write_text("{\"model\": 1}")
    assert run(["feasmap", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run(["simulate", "--method", "lqr"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "slsmpc", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("invset", "simulate", "feasmap", "bench"):
        assert cmd in out.stdout


def _small_sim(cfg, **sim):
    d = _data(cfg)
    d["simulation"].update({"episodes": 2, "steps": 3, **sim})
    return ExperimentConfig.model_validate(d)


def test_simulate_sls_respects_constraints(cfg, tmp_path):
    small = _small_sim(cfg)
    summary = cmd_simulate(small, tmp_path)
    assert summary["methods"]["sls"]["violations"] == 0
    rows = _read(tmp_path / "trajectories_sls.csv")
    assert rows[0][:4] == ["episode", "step", "x0", "x1"]
    body = rows[1:]
    assert len(body) == 2 * 4
    for r in body:
        if r[6] == "feasible":
            assert float(r[7]) >= 0 and float(r[8]) >= 0
    rec = json.loads((tmp_path / "run_sls.json").read_text())
    assert rec["config_hash"] == small.config_hash() and rec["sampling"] == "mixed"
    step = rec["episodes"][0]["steps"][0]
    assert set(step["timings"]) >= {"bisection", "grid", "total"}
    last = rec["episodes"][0]["steps"][-1]
    assert last["status"] == "final" and last["step"] == 3 and last["margin_x"] >= 0


def test_simulate_replay_and_pool(cfg, tmp_path):
    small = _small_sim(cfg, steps=2)
    cmd_simulate(small, tmp_path / "a")
    cmd_simulate(small, tmp_path / "b", jobs=2)
    a = (tmp_path / "a" / "trajectories_sls.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectories_sls.csv").read_bytes()
    cmd_simulate(small.with_overrides(seed=1), tmp_path / "c")
    assert a != (tmp_path / "c" / "trajectories_sls.csv").read_bytes()


def test_simulate_tube_unit_long_horizon_exit_code(tmp_path):
    out = tmp_path / "tube"
    code = run(["simulate", "--method", "tube_unit", "--horizon", "8", "--out", str(out), "--seed", "0"])
    assert code == 2
    rec = json.loads((out / "run_tube_unit.json").read_text())
    assert rec["infeasible_at_start"] == len(rec["episodes"]) == 10
    assert rec["episodes"][0]["aborted"]["step"] == 0
    assert rec["episodes"][0]["aborted"]["state"] == [-7.0, -2.0]


def test_simulate_nominal_plant_follows_prediction(cfg, tmp_path):
    d = _data(cfg, method="tube_unit")
    d["model"].update({"eps_A": 0.0, "eps_B": 0.0, "sigma_w": 0.0})
    d["simulation"].update({"episodes": 1, "steps": 4})
    nominal = ExperimentConfig.model_validate(d)
    cmd_simulate(nominal, tmp_path)
    rows = _read(tmp_path / "trajectories_tube_unit.csv")[1:]
    A, B = np.array(cfg.model.A), np.array(cfg.model.B)
    for r, nxt in zip(rows, rows[1:]):
        x, u = np.array(r[2:4], dtype=float), np.array(r[4:5], dtype=float)
        assert np.array_equal(np.array(nxt[2:4], dtype=float), A @ x + B @ u)


def test_feasmap_empty_grid(cfg, tmp_path):
    d = _data(cfg, method="all")
    d["feasmap"] = {"spacing": 0.5, "lo": [0.1, 0.1], "hi": [0.4, 0.4]}
    c = ExperimentConfig.model_validate(d)
    assert len(feasmap_grid(c)) == 0
    cmd_feasmap(c, tmp_path)
    for m in ("sls", "tube_unit", "tube_zinv"):
        assert _read(tmp_path / f"feasmap_{m}.csv") == [["x0", "x1", "status", "in_terminal"]]


def test_feasmap_points(cfg, tmp_path, XT):
    pts = np.array([[9.9, 9.9], [-7.0, -2.0], [0.0, 0.0], [-9.5, 9.5], [4.0, -5.0]])
    c = cfg.with_overrides(horizon=10)
    c = c.model_copy(update={"method": "sls"})
    summary = cmd_feasmap(c, tmp_path / "a", points=pts)
    first = (tmp_path / "a" / "feasmap_sls.csv").read_bytes()
    cmd_feasmap(c, tmp_path / "b", jobs=2, points=pts[::-1])
    assert first == (tmp_path / "b" / "feasmap_sls.csv").read_bytes()
    rows = _read(tmp_path / "a" / "feasmap_sls.csv")[1:]
    assert [float(r[0]) for r in rows] == sorted(float(r[0]) for r in rows)
    status = {(float(r[0]), float(r[1])): r[2] for r in rows}
    assert status[(9.9, 9.9)] == "infeasible_certified"
    assert status[(-7.0, -2.0)] == "feasible"
    for r in rows:
        assert r[2] in ("feasible", "infeasible_certified", "unverified")
        assert int(r[3]) == XT.contains([float(r[0]), float(r[1])])
        if r[2] == "feasible":
            assert r[3] == "1"
    info = summary["methods"]["sls"]
    assert info["feasible_outside_terminal"] == 0
    planner = Planner(c, "sls", 10)
    assert info["lb_tau"] == planner.offline.lb_tau.inner and info["lb_beta"] == planner.offline.lb_beta.inner


def test_bench_single_horizon(cfg, tmp_path):
    c = cfg.model_copy(update={"method": "all"})
    summary = cmd_bench(c, tmp_path, horizons=[4], repetitions=1)
    rows = _read(tmp_path / "bench.csv")
    assert rows[0] == ["T", "method", "n_variables", "status", "median_solver_time"]
    assert sorted(r[1] for r in rows[1:]) == ["sls", "tube_zinv"]
    sls = next(d for d in summary["results"] if d["method"] == "sls")
    assert sls["n_variables"] == 5 ** 2 * 2 * 3
    for part in sls["breakdown"]:
        assert part["offline"] + part["bisection"] + part["grid"] == pytest.approx(part["total"], rel=1e-2)
    tube = next(d for d in summary["results"] if d["method"] == "tube_zinv")
    assert tube["n_variables"] == 4 * 3 + 1 + 3 * 20
    assert set(summary["monotone_growth"]) == {"sls", "tube_zinv"}


def test_default_config_path_exists():
    assert default_config_path().exists()
    assert load_config().name == "double_integrator"
