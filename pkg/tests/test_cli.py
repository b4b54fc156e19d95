import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from gwpk import io
from gwpk.cli import EXIT_CONFIG, EXIT_OK, main

SMALL = {"symbol": "harmonic", "T": 0.5, "grid": {"n": 256, "x_max": 20},
         "lattice": {"extent": [8, 8], "nodes": [24, 24]}, "energy": {"N_max": 4, "samples": 5}}


def run(task, cfg, out):
    return main(["run", task, "--config", json.dumps(cfg), "--output", str(out)])


def leaves(obj, prefix=""):
    """Flatten nested JSON into ``{path: value}``."""
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(leaves(v, f"{prefix}/{k}"))
        return out
    if isinstance(obj, list):
        out = {}
        for i, v in enumerate(obj):
            out.update(leaves(v, f"{prefix}[{i}]"))
        return out
    return {prefix: obj}


def test_list(capsys):
    assert main(["list"]) == EXIT_OK
    names = [line.split("\t")[0] for line in capsys.readouterr().out.splitlines()]
    assert {"free", "harmonic", "shear", "anharmonic-bounded", "kicked"} <= set(names)
    assert main(["list", "no-such-symbol"]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert main(["list", "harm"]) == EXIT_OK
    assert "harmonic" in capsys.readouterr().out


def test_flow_csv_matches_shear(tmp_path):
    assert run("flow", {"symbol": "free", "T": 1.0}, tmp_path) == EXIT_OK
    with (tmp_path / "trajectory.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows
    seeds = json.loads((tmp_path / "metrics.json").read_text())["metrics"]["seeds"]
    for r in rows:
        x0, xi0 = seeds[int(r["seed"])]
        t = float(r["t"])
        assert float(r["x"]) == pytest.approx(x0 + 2 * t * xi0, abs=1e-12)
        assert float(r["xi"]) == pytest.approx(xi0, abs=1e-12)
        assert float(r["psi"]) == pytest.approx(xi0 ** 2 * t, abs=1e-10)


def test_evolve_zero_time(tmp_path):
    assert run("evolve", {"symbol": "harmonic", "T": 0.0}, tmp_path) == EXIT_OK
    assert np.array_equal(io.read_array(tmp_path / "u.gwpk"), io.read_array(tmp_path / "u0.gwpk"))
    rec = json.loads((tmp_path / "metrics.json").read_text())
    assert rec["checks"]["identity_at_zero_time"] and rec["passed"]


@pytest.mark.parametrize("cfg", [{"symbol": "harmonic", "bogus": 1}, {"symbol": "nope"}, {"grid": {"n": 100}},
                                 "{not json"])
def test_bad_config(tmp_path, capsys, cfg):
    text = cfg if isinstance(cfg, str) else json.dumps(cfg)
    assert main(["run", "evolve", "--config", text, "--output", str(tmp_path)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == EXIT_CONFIG
    assert json.loads((tmp_path / "error.json").read_text())["exit_code"] == EXIT_CONFIG


def test_unknown_task(tmp_path):
    assert run("teleport", {"symbol": "free"}, tmp_path) == EXIT_CONFIG


def test_sparsity_fit_harmonic(tmp_path):
    cfg = {"symbol": "harmonic", "T": 1.0, "lattice": {"extent": [12, 12], "nodes": [48, 48]}}
    assert run("sparsity-fit", cfg, tmp_path) == EXIT_OK
    rec = json.loads((tmp_path / "metrics.json").read_text())
    assert rec["metrics"]["eps"] > 0.05
    assert (tmp_path / "decay.svg").read_text().startswith("<?xml")


def test_full_report_artifacts_round_trip(tmp_path, capsys):
    assert run("full-report", SMALL, tmp_path) == EXIT_OK
    arrays = sorted(tmp_path.rglob("*.gwpk"))
    assert len(arrays) >= 5
    for p in arrays:
        arr = io.read_array(p)
        assert np.array_equal(io.decode_array(io.encode_array(arr)), arr)
        capsys.readouterr()
        assert main(["inspect", str(p)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert summary["shape"] == list(arr.shape)
    rec = json.loads((tmp_path / "metrics.json").read_text())
    assert set(rec["tasks"]) == {"flow", "evolve", "sparsity-fit", "energy", "modspace", "singularities"}


def test_inspect_missing(tmp_path):
    assert main(["inspect", str(tmp_path / "absent.gwpk")]) == EXIT_CONFIG


def test_repeated_runs_are_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("full-report", SMALL, a) == EXIT_OK
    assert run("full-report", SMALL, b) == EXIT_OK
    assert (a / "metrics.json").read_bytes() == (b / "metrics.json").read_bytes()


def test_thread_count_independence(tmp_path):
    recs = []
    for threads in ("1", "3"):
        out = tmp_path / threads
        env = {"GWPK_THREADS": threads, "PATH": "/usr/bin:/bin"}
        proc = subprocess.run([sys.executable, "-m", "gwpk.cli", "run", "full-report", "--config", json.dumps(SMALL),
                               "--output", str(out)], env=env, capture_output=True, text=True)
        assert proc.returncode == EXIT_OK, proc.stderr
        recs.append(leaves(json.loads((out / "metrics.json").read_text())))
    assert recs[0].keys() == recs[1].keys()
    for k, v in recs[0].items():
        w = recs[1][k]
        if isinstance(v, float):
            assert abs(v - w) <= 1e-12 * max(1.0, abs(v)), k
        else:
            assert v == w, k
