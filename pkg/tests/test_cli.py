import json
import subprocess
import sys

import pytest

from glucocontract.cli import run_command


@pytest.fixture(scope="module")
def cert(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "cert.json"
    assert run_command(["synth", "--subject", "1", "--box", "40:400", "--margin", "1e-3", "--out", str(path)]) == 0
    return path


def test_synth_writes_certificate(cert):
    d = json.loads(cert.read_text())
    assert d["observer"]["margin"] >= 1e-3 and d["controller"]["margin"] >= 1e-3
    assert d["config"] == {"subject": "1", "box": [40.0, 400.0], "margin": 1e-3, "norm": "one", "mode": "corrected"}


def test_synth_infeasible(tmp_path):
    out = tmp_path / "x.json"
    assert run_command(["synth", "--subject", "1", "--margin", "1e3", "--out", str(out)]) == 2
    assert json.loads(out.read_text())["infeasible"] is True


def test_check_identity_metric_fails(cert, tmp_path):
    out = tmp_path / "check.json"
    assert run_command(["check", "--gains", str(cert), "--theta", "identity", "--subject", "1", "--out", str(out)]) == 2
    rows = json.loads(out.read_text())["checks"]
    assert all(r["margin"] < 0 for r in rows)
    assert len(rows[0]["column_slack"]) == 4


def test_check_certificate_metric_passes(cert, tmp_path):
    out = tmp_path / "check.json"
    assert run_command(["check", "--gains", str(cert), "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["checks"]
    assert min(r["margin"] for r in rows) >= 1e-3


def test_simulate_and_report(cert, tmp_path):
    out = tmp_path / "sim"
    assert run_command(["simulate", "--scenario", "1", "--subject", "1", "--gains", str(cert), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 1 + 1441
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["gains"] == str(cert)
    assert rep["report"]["pct_hypo"] == 0.0
    again = tmp_path / "sim2"
    run_command(["simulate", "--scenario", "1", "--subject", "1", "--gains", str(cert), "--out", str(again)])
    assert (again / "trajectory.csv").read_bytes() == (out / "trajectory.csv").read_bytes()
    assert (again / "report.json").read_bytes() == (out / "report.json").read_bytes()
    rjson = tmp_path / "r.json"
    assert run_command(["report", "--input", str(out / "trajectory.csv"), "--out", str(rjson)]) == 0
    assert json.loads(rjson.read_text())["report"] == rep["report"]


def test_montecarlo_overrides_and_determinism(cert, tmp_path):
    argv = ["montecarlo", "--scenario", "2D", "--subject", "1", "--gains", str(cert), "--seed", "9",
            "--set", "trial_count=3", "--set", "sim.duration=800"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_command(argv + ["--out", str(a)]) == 0
    assert run_command(argv + ["--workers", "2", "--out", str(b)]) == 0
    assert (a / "aggregate.json").read_bytes() == (b / "aggregate.json").read_bytes()
    d = json.loads((a / "montecarlo.json").read_text())
    assert d["config"]["trial_count"] == 3 and d["config"]["master_seed"] == 9
    assert d["config"]["sim"]["duration"] == 800
    assert len(d["trials"]) == 3
    assert (a / "summary.csv").read_text().startswith("subject,scenario,")


def test_montecarlo_from_config_file(cert, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"subject": "5", "scenario": "2A", "trial_count": 2, "sim": {"duration": 800},
                               "gains": None}))
    assert run_command(["montecarlo", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["synth", "--subject", "1", "--unknown"],
    ["synth", "--subject", "2"],
    ["synth", "--subject", "1", "--box", "40-400"],
    ["check"],
    ["check", "--gains", "/nonexistent.json"],
    ["simulate", "--scenario", "9", "--subject", "1"],
    ["montecarlo", "--scenario", "2C"],
    ["montecarlo", "--scenario", "2C", "--subject", "1", "--set", "nokeyvalue"],
    [],
])
def test_usage_and_config_errors(argv):
    assert run_command(argv) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "glucocontract", "report", "--input", str(tmp_path / "none.csv")],
                         capture_output=True, text=True)
    assert out.returncode == 1
    assert "error" in out.stderr
