from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lisae import cli
from lisae.linear import load_linear
from lisae.neural import DEEP_MAGIC, load_model


def run(*argv):
    return cli.main([str(a) for a in argv])


def only_file(root, pattern):
    found = sorted(root.glob(pattern))
    assert len(found) == 1, found
    return found[0]


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps({
        "hidden": [32, 16], "epochs_phase1": 3, "epochs_phase2": 2, "n_negatives": 200,
        "max_anomalies": 300, "positive_classes": [1], "anomaly_classes": [7],
    }))
    return path


class TestDemoLinear:
    def test_tilts_towards_negatives(self, tmp_path):
        assert run("demo-linear", "--out", tmp_path) == 0
        rep = json.loads(only_file(tmp_path, "reports/*/demo_linear.json").read_text())
        z_before, z_after = abs(rep["encoder_phase1"][2]), abs(rep["encoder"][2])
        assert z_after > 5 * z_before
        assert rep["axis_scores"]["e3"]["lisae"] > 30 * rep["axis_scores"]["e3"]["ae"]
        ratio = rep["axis_scores"]["e1"]["lisae"] / max(rep["axis_scores"]["e1"]["ae"], 1e-12)
        assert rep["axis_scores"]["e1"]["lisae"] < 0.05 or ratio < 1.5
        model = load_linear(only_file(tmp_path, "models/*/model.bin"))
        assert np.allclose(model.encoder.ravel(), rep["encoder"])

    def test_beta_zero_keeps_encoder(self, tmp_path):
        assert run("demo-linear", "--out", tmp_path, "--beta", 0, "--n-samples", 2000) == 0
        rep = json.loads(only_file(tmp_path, "reports/*/demo_linear.json").read_text())
        assert np.allclose(rep["encoder"], rep["decoder"], atol=1e-6)

    def test_rerun_is_byte_identical(self, tmp_path):
        args = ("demo-linear", "--out", tmp_path, "--n-samples", 2000, "--seed", 4)
        assert run(*args) == 0
        first = only_file(tmp_path, "reports/*/demo_linear.json").read_bytes()
        assert run(*args) == 0
        assert only_file(tmp_path, "reports/*/demo_linear.json").read_bytes() == first

    def test_run_id_tracks_config(self, tmp_path):
        run("demo-linear", "--out", tmp_path, "--n-samples", 500, "--seed", 1)
        run("demo-linear", "--out", tmp_path, "--n-samples", 500, "--seed", 2)
        assert len(list(tmp_path.glob("reports/*"))) == 2


class TestTrainEval:
    def test_round_trip(self, tmp_path, small_cfg):
        assert run("train", "--config", small_cfg, "--out", tmp_path) == 0
        train = json.loads(only_file(tmp_path, "reports/*/train.json").read_text())
        assert train["anomaly_reads"] == 0
        mdir = only_file(tmp_path, "models/*")
        for name in ("phase1.bin", "model.bin"):
            assert (mdir / name).read_bytes().startswith(DEEP_MAGIC)
        before, after = load_model(mdir / "phase1.bin"), load_model(mdir / "model.bin")
        assert before.param_blob("decoder") == after.param_blob("decoder")

        assert run("eval", "--config", small_cfg, "--out", tmp_path) == 0
        rep = json.loads(only_file(tmp_path, "reports/*/eval.json").read_text())
        assert 0.0 <= rep["auc_before"] <= 1.0 and 0.0 <= rep["auc_after"] <= 1.0
        assert rep["checksums"]["phase1"] == rep["checksums"]["before_eval"]
        with open(only_file(tmp_path, "reports/*/scores.csv"), newline="") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == rep["task"]["n_test_normal"] + rep["task"]["n_test_anomaly"]

        scores = only_file(tmp_path, "reports/*/scores.csv")
        assert run("sweep", "--scores-csv", scores, "--out", tmp_path / "sw", "--num-points", 16) == 0
        with open(only_file(tmp_path / "sw", "reports/*/sweep.csv"), newline="") as f:
            assert next(csv.reader(f)) == ["threshold", "normal_acc", "anomaly_acc"]

    def test_env_seed_override(self, tmp_path, small_cfg, monkeypatch):
        monkeypatch.setenv("LISAE_SEED", "17")
        assert run("train", "--config", small_cfg, "--out", tmp_path) == 0
        assert json.loads(only_file(tmp_path, "reports/*/train.json").read_text())["config"]["seed"] == 17

    def test_flag_beats_env(self, tmp_path, small_cfg, monkeypatch):
        monkeypatch.setenv("LISAE_SEED", "17")
        assert run("train", "--config", small_cfg, "--out", tmp_path, "--seed", 3) == 0
        assert json.loads(only_file(tmp_path, "reports/*/train.json").read_text())["config"]["seed"] == 3


def test_ablate_row_count(tmp_path):
    cfg = tmp_path / "abl.json"
    cfg.write_text(json.dumps({
        "positives": [0, 1], "negatives": [5, 6], "outliers": [2, 3], "hidden": [16],
        "latent_dim": 3, "epochs_phase1": 2, "epochs_phase2": 1,
    }))
    assert run("ablate", "--config", cfg, "--out", tmp_path) == 0
    with open(only_file(tmp_path, "reports/*/ablation.csv"), newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2 * 2 * (2 + 2)
    assert all(0.0 <= float(r["auc"]) <= 1.0 for r in rows)


def test_gen_idx(tmp_path):
    assert run("gen", "--out", tmp_path, "--n-samples", 10) == 0
    path = only_file(tmp_path, "data/*/strokes-images-idx3-ubyte")
    assert path.read_bytes()[:4] == b"\x00\x00\x08\x03"


class TestErrors:
    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n  "seed": 1,\n  "beta": ,\n}')
        assert run("train", "--config", bad) == 2
        err = capsys.readouterr().err
        assert "line 3" in err and "column" in err

    def test_unknown_key(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"seeed": 1}')
        assert run("train", "--config", bad) == 2

    def test_bad_value(self, tmp_path):
        assert run("demo-linear", "--out", tmp_path, "--learning-rate", -1) == 2

    def test_missing_file(self, tmp_path):
        assert run("train", "--config", tmp_path / "nope.json") == 4

    def test_missing_model_for_eval(self, tmp_path, small_cfg):
        assert run("eval", "--config", small_cfg, "--out", tmp_path) == 4

    def test_bad_env_seed(self, monkeypatch, tmp_path):
        monkeypatch.setenv("LISAE_SEED", "x")
        assert run("demo-linear", "--out", tmp_path) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lisae.cli", "sweep"], capture_output=True, text=True)
    assert proc.returncode == 2 and "scores_csv" in proc.stderr
