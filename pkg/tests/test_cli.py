import csv
import json

import pytest

from jgc.cli import main

FAST = ["--epochs", "3", "--hidden", "4,4", "--workers", "1"]


def run(*argv):
    return main([str(a) for a in argv])


def outputs(d):
    """Every output file's bytes except the manifest, which carries a timestamp."""
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def manifest_without_provenance(d):
    m = json.loads((d / "manifest.json").read_text())
    m.pop("provenance")
    return m


@pytest.fixture
def sim(tmp_path):
    d = tmp_path / "sim"
    assert run("simulate", "var", "--n", 3, "--t", 60, "--tau", 2, "--seed", 4, "--out", d) == 0
    return d


def test_simulate_writes_data_and_truth(sim):
    assert {"data.csv", "truth.json", "spec.json", "manifest.json", "log.txt"} <= {
        p.name for p in sim.iterdir()}
    header = (sim / "data.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 3
    truth = json.loads((sim / "truth.json").read_text())
    assert truth["n"] == 3


@pytest.mark.parametrize("cmd", ["simulate", "analyze", "sweep"])
def test_repeated_invocation_is_byte_identical(tmp_path, sim, cmd):
    def once(out):
        if cmd == "simulate":
            return run("simulate", "map", "--t", 80, "--seed", 3, "--out", out)
        if cmd == "analyze":
            return run("analyze", "--data", sim / "data.csv", "--eta", 2, "--seed", 1,
                       "--time-input", "--smooth", 3, "--svg", *FAST, "--out", out)
        return run("sweep", "var", "--n", 3, "--t", 60, "--tau", 2, "--eta", 2,
                   "--lambda-grid", "0.5,1", "--realizations", 2, "--seed", 5, *FAST,
                   "--out", out)
    out = tmp_path / "a"
    assert once(out) == 0
    first, first_manifest = outputs(out), manifest_without_provenance(out)
    assert once(out) == 0
    assert outputs(out) == first
    assert manifest_without_provenance(out) == first_manifest


def test_sweep_independent_of_worker_count(tmp_path):
    args = ["sweep", "var", "--n", 3, "--t", 60, "--tau", 2, "--eta", 2, "--lambda-grid",
            "0.5,2", "--realizations", 2, "--seed", 1, "--epochs", 3, "--hidden", "4,4"]
    assert run(*args, "--workers", 1, "--out", tmp_path / "w1") == 0
    assert run(*args, "--workers", 2, "--out", tmp_path / "w2") == 0
    for name in ("report.json", "best.json", "stability.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()
    rows = list(csv.reader((tmp_path / "w1" / "stability.csv").open()))
    assert rows[0] == ["lambda", "f_score_mean", "f_score_sd"] and len(rows) == 3


def test_analyze_then_evaluate(tmp_path, sim):
    res = tmp_path / "res"
    assert run("analyze", "--data", sim / "data.csv", "--eta", 2, *FAST, "--out", res) == 0
    assert sorted(p.name for p in res.glob("result_*.json")) == [
        "result_0.json", "result_1.json", "result_2.json"]
    ev = tmp_path / "ev"
    assert run("evaluate", "--results", res, "--truth", sim / "truth.json", "--out", ev) == 0
    metrics = json.loads((ev / "metrics.json").read_text())
    assert 0 <= metrics["metrics"]["auroc"] <= 1
    assert (ev / "roc.csv").exists() and (ev / "pr.csv").exists()


def test_targets_flag_limits_results(tmp_path, sim):
    out = tmp_path / "r"
    assert run("analyze", "--data", sim / "data.csv", "--eta", 2, "--targets", "1", *FAST,
               "--out", out) == 0
    assert [p.name for p in out.glob("result_*.json")] == ["result_1.json"]
    assert run("analyze", "--data", sim / "data.csv", "--targets", "7", *FAST,
               "--out", tmp_path / "bad") == 2


def test_trace_header(tmp_path, sim):
    out = tmp_path / "r"
    assert run("analyze", "--data", sim / "data.csv", "--eta", 2, "--targets", "0",
               "--time-input", *FAST, "--out", out) == 0
    header = (out / "trace_0.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "t"
    assert header[1:] == ["var0@0u1", "var0@lag2", "var1@0u1", "var1@lag2", "var2@0u1",
                          "var2@lag2"]


def test_config_file_and_flag_precedence(tmp_path, sim):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"eta": 3, "epochs": 3, "hidden": "4,4", "workers": 1,
                               "lambda": 0.7}))
    out = tmp_path / "r"
    assert run("analyze", "--data", sim / "data.csv", "--config", cfg, "--eta", 2,
               "--targets", "0", "--out", out) == 0
    used = json.loads((out / "analysis_config.json").read_text())
    assert used["eta"] == 2 and used["lam"] == 0.7


def test_unknown_config_key_is_usage_error(tmp_path, sim, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"etaa": 3}))
    assert run("analyze", "--data", sim / "data.csv", "--config", cfg,
               "--out", tmp_path / "r") == 2
    assert "etaa" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    assert run("simulate", "nope", "--out", tmp_path / "x") == 2
    assert "lorenz96" in capsys.readouterr().err
    assert run("analyze", "--data", tmp_path / "missing.csv", "--out", tmp_path / "y") == 1
    assert run("frobnicate") == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n3,x\n")
    assert run("analyze", "--data", bad, "--out", tmp_path / "z") == 1
    assert run("analyze", "--data", bad, "--smooth", 2, "--out", tmp_path / "w") in (1, 2)


def test_evaluate_key_mismatch_fails(tmp_path):
    sim = tmp_path / "map"
    assert run("simulate", "map", "--t", 60, "--tau", 3, "--out", sim) == 0
    res = tmp_path / "res"
    assert run("analyze", "--data", sim / "data.csv", "--eta", 1, *FAST, "--out", res) == 0
    # the coupling sits at lag 3, which an eta=1 analysis cannot score at lag level
    assert run("evaluate", "--results", res, "--truth", sim / "truth.json", "--mode", "lag",
               "--out", tmp_path / "ev") == 1
    m = json.loads((tmp_path / "ev" / "manifest.json").read_text())
    assert m["status"] == "exit 1"
