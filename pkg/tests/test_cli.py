import csv
import json

import pytest

from fastdoc.bench import CSV_COLUMNS
from fastdoc.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, git_hash, main


def test_git_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "bench.json"
    p.write_text(json.dumps({"sweeps": {"N": [3, 6]}, "n": 4, "d": 2, "trials": 2}))
    return p


def test_bench_outputs_and_replay(tmp_path, small_config):
    out = tmp_path / "b"
    assert main(["bench", "--config", str(small_config), "--out", str(out), "--quiet"]) == EXIT_OK
    with open(out / "results.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 1 + 2 * 2 * 3
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["outputs"]) == {"results.csv", "config.json"}
    assert man["inputs"]["config"]["sha256"]
    code = main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r"), "--quiet"])
    assert code == EXIT_OK


def test_replay_detects_changed_input(tmp_path, small_config):
    out = tmp_path / "b"
    main(["bench", "--config", str(small_config), "--out", str(out), "--quiet"])
    small_config.write_text(json.dumps({"sweeps": {"N": [3]}, "n": 4, "d": 2, "trials": 1}))
    assert main(["replay", str(out / "manifest.json"), "--quiet"]) == EXIT_CONFIG


def test_bench_config_errors(tmp_path):
    assert main(["bench", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG
    bad.write_text(json.dumps({"trials": 0}))
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG
    assert main(["bench", "--solvers", "magic", "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG


def test_verify_exit_codes(tmp_path, capsys):
    out = tmp_path / "v"
    assert main(["verify", "--instances", "3", "--max-N", "5", "--max-n", "6", "--max-d", "3", "--out", str(out), "--quiet"]) == EXIT_OK
    report = json.loads((out / "verify.json").read_text())
    assert report["n_checks"] == 4
    assert report["max_dense_error"] < 1e-6
    assert main(["verify", "--instances", "0", "--out", str(out), "--quiet"]) == EXIT_OK
    assert "max dense error 0.000e+00" in capsys.readouterr().out
    code = main(["verify", "--instances", "2", "--max-N", "5", "--max-n", "6", "--max-d", "3",
                 "--threshold", "0", "--out", str(out), "--quiet"])
    assert code == EXIT_VERIFY
    assert "failed seeds" in capsys.readouterr().err
    assert main(["verify", "--instances", "-1", "--out", str(out), "--quiet"]) == EXIT_CONFIG


def test_verify_replay(tmp_path):
    out = tmp_path / "v"
    main(["verify", "--instances", "2", "--max-N", "5", "--max-n", "6", "--max-d", "3", "--seed", "7",
          "--out", str(out), "--quiet"])
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r"), "--quiet"]) == EXIT_OK


def test_demo_generate_train_replay(tmp_path):
    out = tmp_path / "d"
    assert main(["demo", "--scenario", "straight", "--gen-demo", "--out", str(out), "--quiet"]) == EXIT_OK
    demo = json.loads((out / "demo.json").read_text())
    assert len(demo["states"]) == 150
    code = main(["demo", "--scenario", "straight", "--train", "--max-iter", "2",
                 "--out", str(out), "--quiet"])
    assert code == EXIT_OK
    with open(out / "training_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "loss", "build_ns", "solve_ns", "theta_json"]
    assert len(rows) == 4
    theta = json.loads((out / "theta.json").read_text())
    assert len(theta["theta"]) == 10
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r"), "--quiet"]) == EXIT_OK


def test_demo_errors(tmp_path):
    out = str(tmp_path)
    assert main(["demo", "--scenario", "loop", "--gen-demo", "--out", out, "--quiet"]) == EXIT_CONFIG
    assert main(["demo", "--gen-demo", "--theta-star", "[1, 2]", "--out", out, "--quiet"]) == EXIT_CONFIG
    assert main(["demo", "--gen-demo", "--noise", "-1", "--out", out, "--quiet"]) == EXIT_CONFIG
    assert main(["demo", "--train", "--demo", str(tmp_path / "none.json"), "--out", out, "--quiet"]) == EXIT_CONFIG
    assert main(["demo", "--out", out]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_demo_theta_inline(tmp_path):
    theta = json.dumps([12, 20, 6, 6, 3, 1.5, 0.8, 1.2, 11, 0.8])
    out = tmp_path / "d"
    assert main(["demo", "--gen-demo", "--theta-star", theta, "--noise", "0.01", "--seed", "3",
                 "--out", str(out), "--quiet"]) == EXIT_OK
