import csv
import json
import subprocess
import sys

import pytest

from pointq import fixtures as F
from pointq import network as net
from pointq.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, main


def run(*argv):
    return main([str(a) for a in argv])


def test_validate(fixtures_dir, capsys):
    assert run("validate", "--network", fixtures_dir / "grid.json") == EXIT_OK
    assert "well-formed" in capsys.readouterr().out


def test_validate_reports_problems(tmp_path, capsys):
    doc = net.network_to_dict(F.chain())
    doc["links"][0]["length"] = -1
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert run("validate", "--network", p) == EXIT_INPUT
    assert "bad_length" in capsys.readouterr().out


def test_missing_and_malformed_inputs(tmp_path):
    assert run("validate", "--network", tmp_path / "none.json") == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert run("divert", "--network", bad, "--scenario", bad) == EXIT_INPUT


def test_calibrate_outputs(fixtures_dir, tmp_path):
    assert run("calibrate", "--network", fixtures_dir / "chain.json",
               "--measurements", fixtures_dir / "chain_duplicates.csv", "--out", tmp_path) == EXIT_OK
    summary = json.loads((tmp_path / "calibration_summary.json").read_text())
    assert summary["objective"] == pytest.approx(200.0, abs=1e-6)
    rows = list(csv.DictReader(open(tmp_path / "residuals.csv")))
    assert sorted(float(r["residual"]) for r in rows) == pytest.approx([-10.0, 10.0])


def test_identify_outputs(fixtures_dir, tmp_path):
    assert run("identify", "--network", fixtures_dir / "sensor_net.json",
               "--measurements", fixtures_dir / "sensor_net_measurements.csv", "--out", tmp_path) == EXIT_OK
    s = json.loads((tmp_path / "identify_summary.json").read_text())
    assert s["counts"] == {"measured": 4, "identified": 6, "undetermined": 0}
    assert s["vmt"]["upper"] == 0.0


def test_identify_with_turn_ratios(fixtures_dir, tmp_path):
    assert run("identify", "--network", fixtures_dir / "two_approach.json",
               "--measurements", fixtures_dir / "two_approach_measurements.csv", "--out", tmp_path) == EXIT_OK
    rows = {r["link"]: r for r in csv.DictReader(open(tmp_path / "identify_status.csv"))}
    assert float(rows["a"]["flow"]) == pytest.approx(500.0)


def test_inconsistent_measurements_exit_one(fixtures_dir, tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("kind,id_from,id_to,value,weight\nlink_flow,in,,100,\nlink_flow,out,,120,\n")
    assert run("identify", "--network", fixtures_dir / "chain.json", "--measurements", p,
               "--out", tmp_path) == EXIT_FAIL


def test_divert_simple_and_retimed(fixtures_dir, tmp_path):
    assert run("divert", "--network", fixtures_dir / "grid.json", "--scenario", fixtures_dir / "grid_divert.json",
               "--out", tmp_path / "a") == EXIT_OK
    assert run("divert", "--network", fixtures_dir / "grid.json",
               "--scenario", fixtures_dir / "grid_divert_retime.json", "--out", tmp_path / "b") == EXIT_OK
    simple = json.loads((tmp_path / "a" / "diversion.json").read_text())
    retimed = json.loads((tmp_path / "b" / "diversion.json").read_text())
    assert simple["optimal_diversion"] == pytest.approx(560.0)
    assert retimed["optimal_diversion"] >= simple["optimal_diversion"]
    assert "timing_plans" in retimed


def test_divert_infeasible_route_exits_one(fixtures_dir, tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"route": ["W1", "X2"]}))
    assert run("divert", "--network", fixtures_dir / "grid.json", "--scenario", sc, "--out", tmp_path) == EXIT_FAIL


def test_simulate_is_reproducible_and_metrics_run(fixtures_dir, tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"network": str(fixtures_dir / "grid.json"), "horizon": 1800, "seed": 4,
                              "arrivals": "poisson"}))
    for d in ("a", "b"):
        assert run("simulate", "--scenario", sc, "--out", tmp_path / d) == EXIT_OK
    ev = tmp_path / "a" / "events.csv"
    assert ev.read_bytes() == (tmp_path / "b" / "events.csv").read_bytes()
    assert run("simulate", "--scenario", sc, "--seed", 5, "--out", tmp_path / "c") == EXIT_OK
    assert ev.read_bytes() != (tmp_path / "c" / "events.csv").read_bytes()

    out = tmp_path / "m"
    assert run("metrics", "--network", fixtures_dir / "grid.json", "--events", ev, "--entry", "W1",
               "--exit", "X2", "--window", 600, 1800, "--out", out) == EXIT_OK
    for name in ("summary.json", "travel_times.csv", "excess_green.csv", "excess_green_cdf.csv",
                 "macro_series.csv", "queue_series.csv", "mfd.csv"):
        assert (out / name).is_file(), name
    first = (out / "summary.json").read_bytes()
    assert run("metrics", "--network", fixtures_dir / "grid.json", "--events", ev, "--entry", "W1",
               "--exit", "X2", "--window", 600, 1800, "--out", out) == EXIT_OK
    assert (out / "summary.json").read_bytes() == first


def test_sweep_writes_mqd(fixtures_dir, tmp_path):
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps({"network": str(fixtures_dir / "grid.json"), "factors": [1.0, 1.5],
                              "step_hours": 0.25, "seed": 1}))
    assert run("sweep", "--scenario", sc, "--out", tmp_path) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "mqd.csv")))
    assert [r["gamma"] for r in rows] == ["1", "1.5"]


def test_metrics_rejects_non_log(fixtures_dir, tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n")
    assert run("metrics", "--network", fixtures_dir / "grid.json", "--events", p, "--out", tmp_path) == EXIT_INPUT


@pytest.mark.parametrize("name,builder", [
    ("grid_sweep", lambda: F.grid(demand=600.0, storage=120, greens={"4": (20.0, 36.0)})),
    ("grid_heavy", lambda: F.grid(demands={"W1": 1300.0, "W3": 1300.0, "N1": 200.0, "N2": 200.0})),
])
def test_scenario_networks_match_builders(fixtures_dir, name, builder):
    assert net.load_network(fixtures_dir / f"{name}.json") == builder()


def test_console_entry_point(fixtures_dir):
    r = subprocess.run([sys.executable, "-m", "pointq.cli", "validate", "--network", fixtures_dir / "chain.json"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
