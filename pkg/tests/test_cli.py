import csv
import json
import math

import numpy as np
import pytest

from genflow.cli import (
    OUT_ENV, RunConfig, build_parser, command_defaults, flags_to_overrides, load_schema, main,
    run_command, run_custom, run_scenario, scenario_defaults, strip_volatile,
)
from genflow.errors import ConfigurationError

SMALL_NET = {"epsilon": {"max": 1e-2, "min": 1e-4, "count": 4}}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- scenarios with defaults ---------------------------------------------------------------


def test_marsden_defaults(marsden_run):
    res = marsden_run
    assert res.exit_code == 0, [a for a in res.assertions if not a["passed"]]
    rep = res.report
    # flow-property violation at α = 0 is about π/2
    assert rep["flow_violation"]["residual"] == pytest.approx(math.pi / 2, abs=0.2)
    assert "pw-association held, flow property failed" in rep["limiting_flow"]["messages"]
    for name in ("report.json", "trajectories.csv", "flowtable.csv", "flowtable.dat",
                 "trajectories.dat", "flow_residual.dat"):
        assert (res.out_dir / name).is_file()


def test_torus_defaults(torus_run):
    res = torus_run
    assert res.exit_code == 0, [a for a in res.assertions if not a["passed"]]
    assert "limit discontinuous, flow property holds" in res.report["limiting_flow"]["messages"]


def test_hierarchy_defaults(hierarchy_run):
    res = hierarchy_run
    assert res.exit_code == 0
    assert all(res.report["hierarchy"]["non_implications"].values())
    assert (res.out_dir / "hierarchy.dat").is_file()


def test_report_embeds_config_and_version(marsden_run):
    rep = json.loads((marsden_run.out_dir / "report.json").read_text())
    assert rep["report_version"] == "1.0" and rep["status"] == "pass"
    assert rep["config"] == marsden_run.report["config"]
    RunConfig(rep["config"])  # the embedded config validates on its own


def test_csv_layouts(marsden_run, torus_run):
    rows = _read_csv(marsden_run.out_dir / "trajectories.csv")
    assert rows[0][:2] == ["epsilon", "t"]
    n_traj = 7 * 5 * 201
    assert len(rows) == 1 + n_traj
    rows = _read_csv(torus_run.out_dir / "flowtable.csv")
    assert rows[0][:2] == ["epsilon", "t"]
    assert len(rows) == 1 + 7 * 21 * 21 * 21


# -- errors --------------------------------------------------------------------------------


def test_schema_violation_exits_2(tmp_path):
    res = run_scenario("marsden", {"epsilon": {"count": "seven"}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 2 and "epsilon/count" in res.message
    assert not any(tmp_path.iterdir())
    assert run_scenario("marsden", {"tolerance": -1.0}).exit_code == 2
    assert run_scenario("sphere").exit_code == 2


def test_cross_field_rules_exit_2(tmp_path):
    res = run_scenario("marsden", {"epsilon": {"min": 1.0, "max": 1e-3}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 2
    res = run_scenario("marsden", {"field": {"kind": "torus"}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 2


def test_numerical_failure_exits_3_with_context(tmp_path):
    res = run_command("solve", {**SMALL_NET, "max_steps": 1, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 3
    assert "numerical failure in flow" in res.message
    assert "eps=" in res.message and "point=" in res.message


def test_missing_or_bad_config_file(tmp_path):
    assert run_custom(tmp_path / "nope.json").exit_code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_custom(bad).exit_code == 2
    bad.write_text("[1, 2]")
    assert run_custom(bad).exit_code == 2


# -- configuration ---------------------------------------------------------------------------


def test_env_var_and_out_flag_precedence(tmp_path):
    env = {OUT_ENV: str(tmp_path / "env")}
    cfg = RunConfig.resolve(scenario="hierarchy", environ=env)
    assert cfg.out_dir == tmp_path / "env"
    cfg = RunConfig.resolve(scenario="hierarchy", environ=env,
                            overrides={"output": {"dir": str(tmp_path / "flag")}})
    assert cfg.out_dir == tmp_path / "flag"
    assert RunConfig.resolve(scenario="hierarchy", environ={}).out_dir.name == "hierarchy"


def test_flags_map_onto_config():
    ns = build_parser().parse_args(["run", "marsden", "--epsilon-min", "1e-6", "--epsilon-count", "4",
                                    "--tol", "1e-8", "--grid-t", "9", "--grid-p", "64",
                                    "--case", "b", "--out", "x"])
    assert flags_to_overrides(ns) == {
        "epsilon": {"min": 1e-6, "count": 4}, "tolerance": 1e-8, "t_grid": {"count": 9},
        "p_grid": {"count": 64}, "field": {"case": "b"}, "output": {"dir": "x"}}


@pytest.mark.parametrize("name", ["marsden", "torus", "hierarchy"])
def test_defaults_validate(name):
    RunConfig(scenario_defaults(name))


@pytest.mark.parametrize("kind", ["marsden", "torus", "zero", "linear", "quadratic"])
@pytest.mark.parametrize("command", ["solve", "flow", "associate", "conditions"])
def test_command_defaults_validate(command, kind):
    RunConfig(command_defaults(command, kind))


def test_unknown_names_rejected():
    with pytest.raises(ConfigurationError):
        scenario_defaults("sphere")
    with pytest.raises(ConfigurationError):
        command_defaults("plot")
    with pytest.raises(ConfigurationError):
        RunConfig.resolve()


def test_embedded_config_round_trip(tmp_path):
    first = run_command("conditions", {"field": {"kind": "linear"}, "output": {"dir": str(tmp_path / "a")}})
    assert first.exit_code == 0
    path = tmp_path / "embedded.json"
    path.write_text(json.dumps(first.report["config"]))
    again = run_custom(path)
    assert again.exit_code == 0
    assert strip_volatile(again.report) == strip_volatile(first.report)


# -- custom commands ---------------------------------------------------------------------------


def test_solve_zero_field_is_constant(tmp_path):
    res = run_command("solve", {"field": {"kind": "zero"}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 0
    assert res.report["checks"]["max_drift_from_start"] == 0.0
    rows = _read_csv(tmp_path / "trajectories.csv")
    assert rows[0] == ["epsilon", "t", "start0", "x0"]
    body = np.array(rows[1:], dtype=float)
    assert np.array_equal(body[:, 3], body[:, 2])
    assert set(body[:, 2]) == {-1.0, 0.5}


def test_conditions_marsden_hold(tmp_path):
    res = run_command("conditions", {"expect": {"global-bound-h": "holds", "logtype-derivative": "holds"},
                                     "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 0
    assert res.report["checks"] == {"global-bound-h": "holds", "logtype-derivative": "holds"}


def test_expectation_mismatch_exits_1(tmp_path):
    res = run_command("conditions", {"expect": {"global-bound-h": "fails"}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 1 and res.report["status"] == "fail"
    assert (tmp_path / "report.json").is_file()


def test_associate_fast_torus_holds(tmp_path):
    res = run_command("associate", {"field": {"kind": "torus"}, "p_grid": {"count": 11},
                                    "t_grid": {"count": 11}, "expect": {"verdict": "holds"},
                                    "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 0
    assert res.report["association"]["notion"] == "fast"


def test_flow_command_writes_table(tmp_path):
    res = run_command("flow", {"field": {"kind": "linear"}, **SMALL_NET, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 0
    assert (tmp_path / "flowtable.csv").is_file() and (tmp_path / "flowtable.dat").is_file()


def test_associate_without_closed_form_is_config_error(tmp_path):
    res = run_command("associate", {"field": {"kind": "linear"}, "output": {"dir": str(tmp_path)}})
    assert res.exit_code == 2


# -- main ----------------------------------------------------------------------------------------


def test_main_schema(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == load_schema()


def test_main_runs_command(tmp_path, capsys):
    code = main(["conditions", "--field", "linear", "--out", str(tmp_path)])
    assert code == 0
    assert "status pass" in capsys.readouterr().out


def test_main_config_flag_and_errors(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"field": {"kind": "zero"}, "expect": {"max_drift_from_start": 0.0}}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "PASS  expect max_drift_from_start" in capsys.readouterr().out
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2
    assert "configuration error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run", "sphere"])


def test_main_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["conditions", "--field", "linear"]) == 0
    assert (tmp_path / "env" / "report.json").is_file()
