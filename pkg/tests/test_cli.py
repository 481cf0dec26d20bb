from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from hdnn.cli import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, main
from hdnn.distributed import example1
from hdnn.layers import init_network, load_network, save_network


def rows(path):
    return list(csv.DictReader(open(path)))


def write_pattern(path, S, Ts, Rs):
    doc = {"M": len(S), "S": np.asarray(S).tolist(), "T": [np.asarray(t).tolist() for t in Ts],
           "R": [np.asarray(r).tolist() for r in Rs]}
    path.write_text(json.dumps(doc))
    return str(path)


# --- generate ---------------------------------------------------------------


def test_generate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["generate", "--dataset", "swiss_roll", "--samples", "100", "--seed", "4", "--out", str(out)]) == EXIT_OK
    assert (a / "swiss_roll.csv").read_bytes() == (b / "swiss_roll.csv").read_bytes()
    assert len(rows(a / "swiss_roll.csv")) == 100
    snap = json.loads((a / "generate_config.json").read_text())
    assert snap["seed"] == 4 and snap["samples"] == 100


def test_generate_rejects_unknown_dataset(tmp_path, capsys):
    assert main(["generate", "--dataset", "spiral", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "spiral" in capsys.readouterr().err
    assert main(["generate", "--samples", "7", "--out", str(tmp_path)]) == EXIT_USAGE


# --- train / eval -----------------------------------------------------------


def test_zero_epochs_saves_initialization(tmp_path):
    args = ["train", "--arch", "H2", "--layers", "3", "--epochs", "0", "--samples", "40",
            "--test-samples", "40", "--seed", "2", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    saved = load_network(tmp_path / "model.json")
    ref = init_network("H2", 4, 3, 0.5, rng=2)
    for k in ref.params:
        assert np.array_equal(saved.params[k], ref.params[k])
    assert np.array_equal(saved.head.W, ref.head.W)


def test_train_then_eval(tmp_path, capsys):
    assert main(["generate", "--samples", "200", "--out", str(tmp_path)]) == EXIT_OK
    data = str(tmp_path / "double_moons.csv")
    assert main(["train", "--data", data, "--epochs", "1", "--batch-size", "50", "--layers", "2",
                 "--out", str(tmp_path)]) == EXIT_OK
    hist = rows(tmp_path / "history.csv")
    assert len(hist) == 4
    capsys.readouterr()
    assert main(["eval", "--model", str(tmp_path / "model.json"), "--data", data, "--out", str(tmp_path)]) == EXIT_OK
    acc = float(capsys.readouterr().out.split()[-1])
    assert 0.0 <= acc <= 1.0


def test_train_usage_errors(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_USAGE
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 1, "learning_rate": 0.1}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["train", "--arch", "H3", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["eval", "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"samples": 30, "dataset": "double_circles"}))
    assert main(["generate", "--config", str(cfg), "--samples", "20", "--out", str(tmp_path)]) == EXIT_OK
    assert len(rows(tmp_path / "double_circles.csv")) == 20


# --- grad-report ------------------------------------------------------------


def test_grad_report_one_layer(tmp_path):
    net = init_network("H1", 4, 1, rng=0)
    save_network(net, tmp_path / "m.json")
    assert main(["grad-report", "--model", str(tmp_path / "m.json"), "--samples", "100", "--batch-size", "25",
                 "--max-batches", "3", "--out", str(tmp_path)]) == EXIT_OK
    rep = rows(tmp_path / "grad_report.csv")
    assert len(rep) == 3
    assert [r["iteration"] for r in rep] == ["0", "1", "2"]
    assert {r["layer_index"] for r in rep} == {"0"}


def test_grad_report_assert_passes_for_h2(tmp_path):
    net = init_network("H2", 4, 6, rng=1, weight_std=1.0)
    save_network(net, tmp_path / "m.json")
    args = ["grad-report", "--model", str(tmp_path / "m.json"), "--samples", "64", "--batch-size", "32",
            "--max-batches", "2", "--assert", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    assert len(rows(tmp_path / "grad_report.csv")) == 2 * 6


# --- check-sparsity ---------------------------------------------------------


def test_check_sparsity_exit_codes(tmp_path, capsys):
    S, pairs = example1()
    good = write_pattern(tmp_path / "ex1.json", S, [t for t, _ in pairs], [r for _, r in pairs])
    assert main(["check-sparsity", "--pattern", good, "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.count("PASS") == 3
    I = np.eye(2, dtype=int)
    bad = write_pattern(tmp_path / "bad.json", I, [np.ones((2, 2), dtype=int)], [I])
    assert main(["check-sparsity", "--pattern", bad, "--out", str(tmp_path)]) == EXIT_DOMAIN
    asym = write_pattern(tmp_path / "asym.json", np.ones((2, 2), dtype=int), [[[1, 1], [0, 1]]], [I])
    assert main(["check-sparsity", "--pattern", asym, "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["check-sparsity", "--pattern", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == EXIT_USAGE


# --- ode-lab ----------------------------------------------------------------


def test_ode_lab_zero_weight_sensitivity(tmp_path):
    args = ["ode-lab", "sensitivity", "--weights", "zero", "--T", "1", "--step", "0.01", "--assert", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    sens = rows(tmp_path / "sensitivity.csv")
    assert all(float(r["norm"]) == pytest.approx(1.0, abs=1e-12) for r in sens)
    assert all(float(r["residual"]) <= 1e-12 for r in sens)


def test_ode_lab_quick_runs(tmp_path):
    out = str(tmp_path)
    assert main(["ode-lab", "period", "--radii", "[0.5, 1.0]", "--assert", "--out", out]) == EXIT_OK
    assert len(rows(tmp_path / "period.csv")) == 2
    assert main(["ode-lab", "explode", "--gamma", "[0.01]", "--T", "50", "--points", "11", "--out", out]) == EXIT_OK
    assert len(rows(tmp_path / "probe.csv")) == 11
    assert main(["ode-lab", "ode2ode", "--path", "rotation", "--T", "1", "--step", "0.01", "--assert", "--out", out]) == EXIT_OK
    assert main(["ode-lab", "ode2ode", "--path", "spiral", "--out", out]) == EXIT_USAGE
