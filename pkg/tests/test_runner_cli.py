import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from umsim.cli import main
from umsim.config import parse_config
from umsim.io import dumps_csv, read_csv, read_sidecar
from umsim.rng import stream_id
from umsim.runner import run_trials

SMALL = {"sa_grid": [1, 1], "ae_grid": [4, 4]}


def chest(**task):
    return parse_config({"task": "chest", "seed": 1, "trials": 3, "geometry": SMALL,
                         "chest": {"algorithms": ["ls"], "snr_grid": [0, 10], **task}})


def test_record_count():
    res = run_trials(chest())
    assert len(res.records) == 6
    assert {r.metric_name for r in res.records} == {"nmse_db"}
    keys = {(r.algorithm, r.sweep_value, r.trial_index, r.metric_name) for r in res.records}
    assert len(keys) == 6
    assert sorted({r.stream_id for r in res.records}) == sorted(stream_id(s, t) for s in (0, 1) for t in range(3))


def test_timing_and_iteration_records():
    res = run_trials(chest(algorithms=["ls", "oamp-gaussian"]), timing=True)
    counts = {}
    for r in res.records:
        counts[r.algorithm, r.metric_name] = counts.get((r.algorithm, r.metric_name), 0) + 1
    assert counts == {("ls", "nmse_db"): 6, ("ls", "runtime_s"): 6, ("oamp-gaussian", "nmse_db"): 6,
                      ("oamp-gaussian", "iterations"): 6, ("oamp-gaussian", "runtime_s"): 6}
    assert "runtime_s" not in {r.metric_name for r in run_trials(chest()).records}


def test_harness_oamp_matches_lmmse():
    cfg = parse_config({"task": "chest", "seed": 4, "trials": 20,
                        "geometry": {"sa_grid": [2, 2], "ae_grid": [8, 8]},
                        "chest": {"algorithms": ["lmmse", "oamp-gaussian"], "snr_grid": [10],
                                  "prior": {"family": "gaussian", "correlation": 0.5}, "tol": 1e-10,
                                  "max_iter": 200}})
    assert cfg.params["ratio"] == 0.3
    res = run_trials(cfg)
    by = {}
    for r in res.records:
        if r.metric_name == "nmse_db":
            by.setdefault(r.trial_index, {})[r.algorithm] = r.value
    for t, v in by.items():
        assert abs(v["oamp-gaussian"] - v["lmmse"]) < 0.05


def test_errors_are_recorded_not_raised():
    cfg = parse_config({"task": "detect", "seed": 2, "trials": 2,
                        "detect": {"detectors": ["zf", "lmmse"], "n_rx": 4, "n_tx": 8, "snr_grid": [10],
                                   "blocks_per_trial": 5}})
    res = run_trials(cfg)
    errs = [r for r in res.records if r.metric_name == "error"]
    assert len(errs) == 2 and all(r.algorithm == "zf" and math.isnan(r.value) for r in errs)
    assert res.failures == 2
    assert sum(r.metric_name == "ser" and r.algorithm == "lmmse" for r in res.records) == 2


def test_workers_do_not_change_output():
    cfg = parse_config({"task": "detect", "seed": 3, "trials": 4,
                        "detect": {"detectors": ["lmmse", "oamp"], "n_rx": 8, "n_tx": 4, "snr_grid": [5, 10],
                                   "blocks_per_trial": 10}})
    assert dumps_csv(run_trials(cfg, workers=1).records) == dumps_csv(run_trials(cfg, workers=2).records)


def test_geometry_task_single_trial():
    cfg = parse_config({"task": "geometry", "seed": 0, "trials": 5,
                        "geometry": {"sa_grid": [2, 2], "ae_grid": [2, 2], "sa_spacing_factor": 4}})
    vals = {r.metric_name: r.value for r in run_trials(cfg).records}
    assert vals["n_elements"] == 16
    assert vals["rayleigh_distance_m"] == pytest.approx(2 * vals["aperture_m"] ** 2 / (299792458.0 / 300e9))
    assert len(run_trials(cfg).records) == len(vals)


def test_beamform_records():
    cfg = parse_config({"task": "beamform", "seed": 5, "trials": 2,
                        "geometry": {"sa_grid": [2, 2], "ae_grid": [4, 4], "sa_spacing_factor": 4},
                        "beamform": {"k_users": [4], "max_iter": 50}})
    res = run_trials(cfg)
    metrics = {(r.algorithm, r.metric_name) for r in res.records}
    assert ("wmmse", "trajectory_min_step") in metrics and ("mrt", "sum_rate_bps_hz") in metrics
    assert all(r.value >= -1e-9 for r in res.records if r.metric_name == "trajectory_min_step")


def write(tmp_path, obj):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(obj))
    return p


def test_cli_end_to_end(tmp_path, capsys):
    cfg = write(tmp_path, {"task": "chest", "seed": 8, "trials": 4, "scenario_id": "t",
                           "geometry": SMALL, "chest": {"algorithms": ["ls", "lmmse"], "snr_grid": [0, 20]}})
    out = tmp_path / "r.csv"
    assert main(["chest", "--config", str(cfg), "--out", str(out), "--sidecar"]) == 0
    stdout = capsys.readouterr().out
    rows = read_csv(out)
    assert len(rows) == 16
    # the printed means are the arithmetic means of the CSV rows
    for line in stdout.strip().splitlines():
        alg, sweep, metric, mean, n = line.split("\t")
        value = float(sweep.split("=")[1])
        vals = [r.value for r in rows if (r.algorithm, r.sweep_value, r.metric_name) == (alg, value, metric)]
        assert float(mean.split("=")[1]) == pytest.approx(sum(vals) / len(vals), rel=1e-15)
        assert int(n.split("=")[1]) == len(vals)
    meta = json.loads((tmp_path / "r.csv.config.json").read_text())
    assert meta["config"]["chest"]["ratio"] == 0.3 and meta["failed_cells"] == 0
    assert read_sidecar(tmp_path / "r.csv.lmmse.cpx").shape == (8, 16)


def test_cli_overrides(tmp_path, capsys):
    cfg = write(tmp_path, {"task": "chest", "seed": 8, "trials": 4, "geometry": SMALL,
                           "chest": {"algorithms": ["ls"], "snr_grid": [0]}})
    out = tmp_path / "o.csv"
    assert main(["chest", "--config", str(cfg), "--out", str(out), "--seed", "99", "--trials", "2", "--quiet"]) == 0
    rows = read_csv(out)
    assert len(rows) == 2 and {r.seed for r in rows} == {99}
    assert capsys.readouterr().out == ""


def test_cli_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, {"task": "chest", "seed": 1, "chest": {"snr_gridd": [0]}})
    assert main(["chest", "--config", str(bad)]) == 1
    assert "snr_gridd" in capsys.readouterr().err
    good = write(tmp_path, {"task": "chest", "seed": 1})
    assert main(["detect", "--config", str(good)]) == 1
    assert main(["chest", "--preset", "nope"]) == 1
    with pytest.raises(SystemExit) as info:
        main(["chest"])
    assert info.value.code == 1
    target = tmp_path / "file"
    target.write_text("")
    cfg = write(tmp_path, {"task": "chest", "seed": 1, "trials": 1, "geometry": SMALL,
                           "chest": {"algorithms": ["ls"], "snr_grid": [0]}})
    assert main(["chest", "--config", str(cfg), "--out", str(target / "x.csv")]) == 2


def test_cli_workers_env(tmp_path, monkeypatch):
    cfg = write(tmp_path, {"task": "chest", "seed": 1, "trials": 1, "geometry": SMALL,
                           "chest": {"algorithms": ["ls"], "snr_grid": [0]}})
    monkeypatch.setenv("UMSIM_WORKERS", "2")
    assert main(["chest", "--config", str(cfg), "--out", str(tmp_path / "a.csv")]) == 0
    assert main(["chest", "--config", str(cfg), "--workers", "0"]) == 1


def test_console_script(tmp_path):
    out = tmp_path / "g.csv"
    proc = subprocess.run([sys.executable, "-m", "umsim.cli", "geometry", "--preset", "fig8_chest",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["metric_name"] for r in rows} >= {"n_elements", "aperture_m", "rayleigh_distance_m"}
    assert float(next(r for r in rows if r["metric_name"] == "n_elements")["value"]) == 1024
    np.testing.assert_equal(len(rows), len({r["metric_name"] for r in rows}))
