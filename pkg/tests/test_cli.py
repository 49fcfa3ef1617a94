import hashlib
import json
import os
import subprocess

import pytest

COALSIM = "coalsim"


def run_cli(tmp_path, cfg, *args):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return subprocess.run([COALSIM, *args, "--config", str(path)],
                          capture_output=True, text=True)


KINGMAN = {"atoms": [[0.0, 1.0]]}
BETA_HEAVY = {"pieces": [{"interval": [0, 1], "tag": "beta",
                          "params": {"alpha": 1.5}}]}


# ---------------------------------------------------------------- validation

def test_minimal_config_valid(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": KINGMAN, "b_max_table": 3},
                "rates")
    assert r.returncode == 0


def test_unknown_field_rejected(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": KINGMAN, "bogus": 1},
                "classify")
    assert r.returncode == 2
    payload = json.loads(r.stdout)
    assert payload["error"] == "VALIDATION_ERROR"
    assert "bogus" in payload["message"]


def test_zero_mass_measure_rejected(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": {"atoms": [], "pieces": []}},
                "classify")
    assert r.returncode == 2
    assert "positive" in json.loads(r.stdout)["message"]


def test_bad_kernel_row_named(tmp_path):
    cfg = {"seed": 1, "measure": KINGMAN,
           "geography": {"topology": "graph",
                         "kernel": [[0.5, 0.5], [0.9, 0.9]]},
           "n_per_site": 2, "horizon": 1.0}
    r = run_cli(tmp_path, cfg, "simulate")
    assert r.returncode == 2
    assert "[1]" in json.loads(r.stdout)["message"]


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{broken")
    r = subprocess.run([COALSIM, "classify", "--config", str(path)],
                       capture_output=True, text=True)
    assert r.returncode == 2
    payload = json.loads(r.stdout)
    assert payload["error"] == "PARSE_ERROR"
    assert ":1:" in payload["message"]


def test_missing_file_is_parse_error(tmp_path):
    r = subprocess.run([COALSIM, "classify", "--config",
                        str(tmp_path / "nope.json")],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stdout)["error"] == "PARSE_ERROR"


def test_nonpositive_replicas_rejected(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": KINGMAN, "replicas": 0},
                "classify")
    assert r.returncode == 2


# ---------------------------------------------------------------- subcommands

def test_classify_beta_heavy(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": BETA_HEAVY}, "classify")
    assert r.returncode == 0
    assert json.loads(r.stdout)["verdict"] == "COMES_DOWN"


def test_rates_csv_shape(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "measure": KINGMAN, "b_max_table": 4},
                "rates")
    lines = r.stdout.strip().splitlines()
    assert lines[0] == "b,k,value,quadrature_error"
    assert "2,2,1.0,0.0" in lines
    assert "4,lambda,6.0,0.0" in lines
    assert "4,gamma,6.0,0.0" in lines


def test_green_json_contract(tmp_path):
    r = run_cli(tmp_path, {"seed": 1, "dimension": 3}, "green")
    assert r.returncode == 0
    payload = json.loads(r.stdout)
    assert set(payload) >= {"estimate", "error", "method", "budget"}
    assert payload["estimate"] == pytest.approx(1.5164, abs=0.01)


def test_simulate_budget_flushes_partial_trajectory(tmp_path):
    out = tmp_path / "run"
    cfg = {"seed": 5, "measure": KINGMAN,
           "geography": {"topology": "complete", "sites": 3},
           "n_per_site": 20, "event_budget": 10, "out_dir": str(out)}
    r = run_cli(tmp_path, cfg, "simulate")
    assert r.returncode == 3
    err = json.loads(r.stdout.strip().splitlines()[-1])
    assert err["error"] == "BUDGET_EXCEEDED"
    lines = (out / "trajectory.jsonl").read_text().strip().splitlines()
    header = json.loads(lines[0])
    assert header["type"] == "header"
    assert header["seed"] == 5
    assert len([l for l in lines if json.loads(l)["type"] == "event"]) == 10


def test_simulate_csv_mode(tmp_path):
    out = tmp_path / "runcsv"
    cfg = {"seed": 2, "measure": KINGMAN,
           "geography": {"topology": "single"},
           "n_per_site": 6, "out_dir": str(out),
           "stop_blocks_at_most": 1}
    r = run_cli(tmp_path, cfg, "simulate", "--format", "csv")
    assert r.returncode == 0
    rows = (out / "trajectory.csv").read_text().strip().splitlines()
    assert rows[0] == "time,block_count"
    assert rows[1].endswith(",6")
    assert rows[-1].endswith(",1")


# ---------------------------------------------------------------- artifacts

EXP_CFG = {"seed": 9, "measure": KINGMAN,
           "geography": {"topology": "complete", "sites": 4},
           "experiment": {"name": "hitting_time", "params": {"n": 10, "k": 2}},
           "replicas": 40}


def _report_hash(out_dir):
    return hashlib.sha256((out_dir / "report.json").read_bytes()).hexdigest()


def test_experiment_report_deterministic(tmp_path):
    hashes = []
    for name in ("a", "b"):
        out = tmp_path / name
        r = run_cli(tmp_path, EXP_CFG, "experiment", "--out", str(out))
        assert r.returncode == 0, r.stdout + r.stderr
        hashes.append(_report_hash(out))
    assert hashes[0] == hashes[1]


def test_seed_changes_report(tmp_path):
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    r1 = run_cli(tmp_path, EXP_CFG, "experiment", "--out", str(out1))
    r2 = run_cli(tmp_path, EXP_CFG, "experiment", "--out", str(out2),
                 "--seed", "10")
    assert r1.returncode == r2.returncode == 0
    assert _report_hash(out1) != _report_hash(out2)


def test_manifest_covers_all_files(tmp_path):
    out = tmp_path / "m"
    r = run_cli(tmp_path, EXP_CFG, "experiment", "--out", str(out))
    assert r.returncode == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert sorted(os.listdir(out)) == sorted(manifest["files"])
    assert manifest["seed"] == 9
    assert "wall_time_seconds" in manifest
    assert {"numpy", "scipy", "python", "artifact"} <= set(manifest["versions"])


def test_manifest_round_trip(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    r = run_cli(tmp_path, EXP_CFG, "experiment", "--out", str(out1))
    assert r.returncode == 0
    embedded = json.loads((out1 / "manifest.json").read_text())["config"]
    r2 = run_cli(tmp_path, embedded, "experiment", "--out", str(out2))
    assert r2.returncode == 0
    assert _report_hash(out1) == _report_hash(out2)


def test_unknown_experiment_name(tmp_path):
    cfg = dict(EXP_CFG, experiment={"name": "wat", "params": {}})
    r = run_cli(tmp_path, cfg, "experiment")
    assert r.returncode == 2
    assert "wat" in json.loads(r.stdout)["message"]
