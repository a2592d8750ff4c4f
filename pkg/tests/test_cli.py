import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cartimp.cli import main
from cartimp.sim import builtin_robot, builtin_scenario_path, read_csv, read_ndjson, steady_state_report


def write_scenario(tmp_path, name="s.json", **sim):
    d = {
        "robot": "builtin:arm_1dof",
        "chain": {"base": "base", "tip": "tool"},
        "controller": {"gains": {"k_ca": {"trans": 100.0, "rot": 0.0}}},
        "events": [{"type": "external_wrench", "start": 0.1, "end": 10.0, "wrench": [0, 5, 0, 0, 0, 0]}],
        "sim": {"duration": 1.0, "dt": 1e-3, **sim},
    }
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


# --------------------------------------------------------------------------- validate


def test_validate_seven_dof(capsys, tmp_path):
    path = tmp_path / "panda.urdf"
    path.write_text(builtin_robot("panda_like"))
    assert main(["validate", str(path)]) == 0
    out = capsys.readouterr().out
    assert "n=7" in out
    assert "mass" in out and "effort" in out


def test_validate_dangling_link(capsys, tmp_path):
    path = tmp_path / "bad.urdf"
    path.write_text("<robot name='x'><link name='a'/><joint name='j' type='revolute'>"
                    "<parent link='a'/><child link='forearm'/></joint></robot>")
    assert main(["validate", str(path)]) == 1
    assert "forearm" in capsys.readouterr().err


def test_validate_unreadable(capsys, tmp_path):
    assert main(["validate", str(tmp_path / "missing.urdf")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_validate_dump_model(capsys, tmp_path):
    path = tmp_path / "arm.urdf"
    path.write_text(builtin_robot("arm_1dof"))
    assert main(["validate", str(path), "--dump-model", "-"]) == 0
    out = capsys.readouterr().out
    dumped = json.loads(out[out.index("{"):])
    assert dumped["name"] == "arm_1dof"


def test_validate_bad_tip(capsys, tmp_path):
    path = tmp_path / "arm.urdf"
    path.write_text(builtin_robot("arm_1dof"))
    assert main(["validate", str(path), "--tip", "nowhere"]) == 1


# --------------------------------------------------------------------------- run


def test_run_equilibrium(capsys, tmp_path):
    d = json.load(open(builtin_scenario_path("equilibrium")))
    d["sim"]["duration"] = 1.0
    scen = tmp_path / "eq.json"
    scen.write_text(json.dumps(d))
    out = tmp_path / "log.csv"
    assert main(["run", str(scen), "-o", str(out), "--json-report"]) == 0
    report = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert report["translation_error"] <= 1e-9 and report["rotation_error"] <= 1e-9
    assert len(read_csv(str(out))) == 1000


def test_run_ndjson(tmp_path, capsys):
    scen = write_scenario(tmp_path, duration=0.2)
    out = tmp_path / "log.ndjson"
    assert main(["run", scen, "-o", str(out), "--format", "ndjson"]) == 0
    assert len(read_ndjson(str(out))) == 200
    assert "steady state over last 0.2 s" in capsys.readouterr().out


def test_run_bad_dt(capsys, tmp_path):
    scen = write_scenario(tmp_path, dt=0.0)
    assert main(["run", scen, "-o", str(tmp_path / "o.csv")]) == 1
    assert "sim.dt" in capsys.readouterr().err


def test_run_missing_scenario(tmp_path):
    assert main(["run", str(tmp_path / "nope.json"), "-o", str(tmp_path / "o.csv")]) == 2


def test_run_unwritable_output(tmp_path):
    scen = write_scenario(tmp_path, duration=0.01)
    assert main(["run", scen, "-o", str(tmp_path / "no" / "such" / "dir.csv")]) == 2


def test_run_numerical_abort(capsys, tmp_path):
    d = {
        "robot": "builtin:arm_1dof",
        "chain": {"tip": "tool"},
        "initial_state": {"qdot": [0.1]},
        "controller": {"gains": {"k_ca": 0.0, "d_ca": {"trans": -1e4, "rot": 0.0}},
                       "limits": {"d_ca": {"min": -1e9}, "delta_tau_max": 1e300, "clamp_effort": False}},
        "sim": {"duration": 5.0},
    }
    scen = tmp_path / "boom.json"
    scen.write_text(json.dumps(d))
    assert main(["run", str(scen), "-o", str(tmp_path / "o.csv")]) == 3
    assert "last good t=" in capsys.readouterr().err


# --------------------------------------------------------------------------- sweep


def test_sweep_empty_values(tmp_path):
    assert main(["sweep", write_scenario(tmp_path), "--param", "gains.k_ca.trans", "--values", ""]) == 1
    assert main(["sweep", write_scenario(tmp_path), "--param", "gains.k_ca.trans", "--values", ",,"]) == 1


def test_sweep_unknown_key(capsys, tmp_path):
    assert main(["sweep", write_scenario(tmp_path), "--param", "gains.k_zz", "--values", "1"]) == 1
    err = capsys.readouterr().err
    assert "gains.k_ca.trans" in err and "sim.dt" in err


def test_sweep_single_value_matches_run(capsys, tmp_path):
    scen = write_scenario(tmp_path)
    table = tmp_path / "sweep.csv"
    assert main(["sweep", scen, "--param", "gains.k_ca.trans", "--values", "100", "--window", "0.5",
                 "-o", str(table)]) == 0
    log = tmp_path / "log.csv"
    assert main(["run", scen, "-o", str(log), "--window", "0.5"]) == 0
    report = steady_state_report(read_csv(str(log)), 0.5)
    header, row = [line.split(",") for line in table.read_text().strip().splitlines()]
    values = dict(zip(header, map(float, row)))
    assert values["value"] == 100.0
    assert values["mean_err_y"] == report.mean_pose_error[1]
    assert values["translation_error"] == report.translation_error


def test_sweep_output_ordered_by_input(capsys, tmp_path):
    scen = write_scenario(tmp_path, duration=0.3)
    assert main(["sweep", scen, "--param", "gains.k_ca.trans", "--values", "300,100,200", "--window", "0.1",
                 "--jobs", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert [float(l.split(",")[0]) for l in lines[1:]] == [300.0, 100.0, 200.0]


def test_sweep_non_numeric_values(tmp_path):
    assert main(["sweep", write_scenario(tmp_path), "--param", "gains.k_ca.trans", "--values", "a,b"]) == 1


# --------------------------------------------------------------------------- entry point


def test_module_entry_point_and_log_level(tmp_path):
    path = tmp_path / "arm.urdf"
    path.write_text(builtin_robot("branching"))
    env = dict(os.environ, CARTIMP_LOG_LEVEL="INFO")
    proc = subprocess.run([sys.executable, "-m", "cartimp", "validate", str(path)], capture_output=True, text=True,
                          env=env)
    assert proc.returncode == 0
    assert "n=2" in proc.stdout
    # ignored elements are logged at INFO level
    assert "ignored <material>" in proc.stderr


def test_help_lists_subcommands():
    proc = subprocess.run([sys.executable, "-m", "cartimp", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("validate", "run", "sweep"):
        assert cmd in proc.stdout


def test_report_sample_count(tmp_path):
    scen = write_scenario(tmp_path, duration=0.5)
    out = tmp_path / "o.csv"
    assert main(["run", scen, "-o", str(out)]) == 0
    assert np.isclose(read_csv(str(out))[-1].t, 0.499)
