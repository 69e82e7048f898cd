import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

import main
from common import SynthesisError
from main import app

runner = CliRunner()

SHORT = """
[experiment]
rho_list = 1.0, 0.2

[sim]
T = 1
x0 = -0.5, 0, 0.05, 0

[scan]
samples = 4
resolution = 4
workers = 1
"""


@pytest.fixture
def config(tmp_path: Path) -> Path:
    path = tmp_path / "short.cfg"
    path.write_text(SHORT)
    return path


def invoke(*args: str):
    return runner.invoke(app, [str(a) for a in args])


def test_simulate_writes_trace_summary_and_echo(config, tmp_path):
    out = tmp_path / "out"
    result = invoke("simulate", "--config", config, "--out", out)
    assert result.exit_code == 0, result.output
    assert "status:" in result.output

    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) == 202
    header = lines[0].split(",")
    assert header[:7] == ["t", "x", "xdot", "xddot", "theta", "thetadot", "thetaddot"]
    assert header[-4:] == ["u_raw", "u_sat", "meas_applied", "status"]

    summary = json.loads((out / "summary.json").read_text())
    assert summary["command"] == "simulate"
    assert set(summary["metrics"]) >= {"position", "angle", "U_tot", "u_sat_pct"}
    assert (out / "summary.txt").exists()
    assert "T = 1.0" in (out / "config.cfg").read_text()


def test_runs_are_byte_identical(config, tmp_path):
    for name in ("a", "b"):
        result = invoke("simulate", "--config", config, "--out", tmp_path / name, "--seed", 7)
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_flags_override_the_file(config, tmp_path):
    out = tmp_path / "out"
    result = invoke("simulate", "--config", config, "--out", out, "--variant", "ipoc", "--rho", 0.5)
    assert result.exit_code == 0, result.output
    rows = list(csv.reader((out / "trace.csv").open()))
    assert len(rows[0]) == 1 + 4 + 4 + 4
    assert [row[-2] for row in rows[1:6]] == ["11", "00", "11", "00", "11"]


def test_sweep_rho(config, tmp_path):
    out = tmp_path / "sweep"
    result = invoke("sweep-rho", "--config", config, "--out", out)
    assert result.exit_code == 0, result.output
    assert (out / "trace_rho1.0.csv").exists() and (out / "trace_rho0.2.csv").exists()
    runs = json.loads((out / "summary.json").read_text())["runs"]
    assert [run["rho"] for run in runs] == [1.0, 0.2]
    table = (out / "summary.txt").read_text()
    assert "position" in table and "angle" in table


def test_compare(config, tmp_path):
    out = tmp_path / "compare"
    result = invoke("compare", "--config", config, "--out", out)
    assert result.exit_code == 0, result.output
    runs = json.loads((out / "summary.json").read_text())["runs"]
    assert {(run["rho"], run["variant"]) for run in runs} == {
        (1.0, "ipoc"), (1.0, "aipoc"), (0.2, "ipoc"), (0.2, "aipoc")
    }
    header = (out / "normalized.csv").read_text().splitlines()[0]
    assert header == "series,tgo,position,angle,normalized"


def test_profiles(config, tmp_path):
    out = tmp_path / "profiles"
    result = invoke("profiles", "--config", config, "--out", out)
    assert result.exit_code == 0, result.output
    runs = json.loads((out / "summary.json").read_text())["runs"]
    assert [run["profile"] for run in runs] == ["low-power", "utility", "ours", "agile"]


def test_stability_map(config, tmp_path):
    out = tmp_path / "map"
    result = invoke("stability-map", "--config", config, "--out", out, "--samples", 3)
    assert result.exit_code == 0, result.output
    for variant in ("ipoc", "aipoc"):
        rows = list(csv.reader((out / f"map_{variant}.csv").open()))
        assert rows[0][:6] == ["xdot_bin", "thetadot_bin", "xdot", "thetadot", "tally", "samples"]
        assert rows[0][6:] == ["x_final", "theta_final", "u_sat", "U_tot"]
        assert sum(int(row[5]) for row in rows[1:]) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert summary["samples"] == 3
    assert set(summary["variants"]["aipoc"]) == {"combined", "x_final", "theta_final", "u_sat", "U_tot"}
    combined = summary["variants"]["aipoc"]["combined"]
    assert 0 <= combined["crash_rate"] <= combined["failure_rate"] <= 1


def test_bad_configuration_exits_with_1(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[sim]\ndt = -1\n")
    result = invoke("simulate", "--config", path, "--out", tmp_path)
    assert result.exit_code == 1
    assert "sim.dt" in result.output


def test_missing_file_exits_with_3(tmp_path):
    result = invoke("simulate", "--config", tmp_path / "missing.cfg", "--out", tmp_path)
    assert result.exit_code == 3


def test_synthesis_failure_exits_with_2(config, tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise SynthesisError("mode 1 cannot be stabilised")

    monkeypatch.setattr(main, "run", fail)
    result = invoke("simulate", "--config", config, "--out", tmp_path)
    assert result.exit_code == 2
    assert "numerical failure" in result.output


def test_shipped_example_is_found_by_name(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    result = invoke("simulate", "--config", "nominal.cfg", "--out", tmp_path / "nominal", "--seed", 1)
    assert result.exit_code != 3
