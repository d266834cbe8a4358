"""End-to-end tests of the command-line pipeline on a tiny configuration."""

import hashlib
import json

import pandas as pd
import pytest
import yaml

from run_pipeline import EXIT_BAD_INPUT, EXIT_MISSING, EXIT_OK, run
from src.data.loader import load_dataset

TINY = {
    "data": {"pattern_count": 2, "samples_per_pattern": 6, "test_per_pattern": 3, "t_obs": 4, "t_pred": 5,
             "joints": 3, "frame_rate": 10.0},
    "model": {"d_model": 8, "latent_rows": 2, "latent_dim": 4, "codebook_size": 8, "dynamics_hidden": 8,
              "refine_hidden": 8},
    "ode": {"method": "euler", "step_size": 0.1, "adaptive": False},
    "anchors": {"count": 2, "restarts": 2, "max_iters": 20},
    "train": {"batch_size": 6, "epochs": 2, "lr": 1.0e-2, "pseudo_threshold": 0.1, "progress": False},
    "eval": {"top_k": 2, "samples_per_component": 2, "coverage_samples": 1, "horizons_ms": [100, 300]},
    "logging": {"level": "WARNING"},
}


@pytest.fixture
def workspace(tmp_path):
    config = tmp_path / "tiny.yaml"
    config.write_text(yaml.safe_dump(TINY), encoding="utf-8")
    data = tmp_path / "data" / "motion.stcm"
    out = tmp_path / "run"
    common = ["--config", str(config), "--data", str(data), "--out", str(out), "--seed", "7"]
    return {"data": data, "out": out, "common": common}


def sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_generate_writes_dataset_and_summary(workspace):
    data = workspace["data"]
    assert run(["generate", *workspace["common"], "-o", str(data)]) == EXIT_OK
    summary = json.loads(data.with_name("motion_summary.json").read_text())
    assert summary["sequences"] == 12
    assert summary["test_sequences"] == 6
    assert summary["separation_ratio"] > 1.0
    assert load_dataset(data).normalized
    assert data.with_name("motion_test.stcm").exists()


def test_generate_is_reproducible(workspace):
    data = workspace["data"]
    run(["generate", *workspace["common"], "-o", str(data)])
    first = sha256(data)
    run(["generate", *workspace["common"], "-o", str(data)])
    assert sha256(data) == first


def test_bad_pattern_count_is_bad_input(workspace):
    assert run(["generate", *workspace["common"], "--patterns", "0"]) == EXIT_BAD_INPUT


def test_stage2_without_stage1_checkpoint(workspace):
    run(["generate", *workspace["common"], "-o", str(workspace["data"])])
    assert run(["train", *workspace["common"], "--stage", "2"]) == EXIT_MISSING


def test_eval_without_model_is_missing_artefact(workspace):
    run(["generate", *workspace["common"], "-o", str(workspace["data"])])
    assert run(["eval", *workspace["common"]]) == EXIT_MISSING


def test_manifest_records_overrides(workspace):
    run(["generate", *workspace["common"], "-o", str(workspace["data"]), "--solver", "rk4"])
    manifest = json.loads((workspace["data"].parent / "manifest_generate.json").read_text())
    assert manifest["config"]["ode"]["method"] == "rk4"
    assert manifest["config"]["misc"]["seed"] == 7


def test_missing_config_file(workspace, tmp_path):
    assert run(["generate", "--config", str(tmp_path / "none.yaml")]) == EXIT_BAD_INPUT


def test_full_pipeline(workspace):
    common, out = workspace["common"], workspace["out"]
    assert run(["generate", *common, "-o", str(workspace["data"])]) == EXIT_OK
    assert run(["train", *common]) == EXIT_OK
    for name in ("stage1.ckpt", "stage2.ckpt", "stage1_loss.csv", "stage2_loss.csv", "anchors.csv"):
        assert (out / name).exists()
    assert len(pd.read_csv(out / "stage1_loss.csv")) == 3

    assert run(["sample", *common, "--index", "1", "--samples", "2"]) == EXIT_OK
    samples = pd.read_csv(out / "samples_1.csv")
    assert len(samples) == 2 * 2 * 5
    assert run(["sample", *common, "--index", "99"]) == EXIT_BAD_INPUT

    assert run(["eval", *common, "--label", "tiny"]) == EXIT_OK
    metrics = json.loads((out / "metrics_stochastic.json").read_text())
    assert metrics["n_inputs"] == 6
    assert metrics["apd"] >= 0.0
    assert run(["eval", *common, "--label", "tiny", "--protocol", "ground_truth"]) == EXIT_OK
    results = pd.read_csv(out / "results.csv")
    assert sorted(results["protocol"]) == ["ground_truth", "stochastic"]
    gt = results[results["protocol"] == "ground_truth"].iloc[0]
    assert gt["ADE"] == 0.0 and gt["FDE"] == 0.0

    assert run(["export-plots", *common]) == EXIT_OK
    for name in ("loss_curves.csv", "latents.csv", "order.csv", "metrics_table.csv", "mae.csv"):
        assert (out / name).exists()
    order = pd.read_csv(out / "order.csv")
    assert set(order["method"]) >= {"euler", "rk4", "dopri5"}


RUN_OUTPUTS = {
    "train": ("stage1.ckpt", "stage2.ckpt", "stage1_loss.csv", "stage2_loss.csv", "anchors.csv"),
    "sample": ("samples_1.csv",),
    "eval": ("metrics_stochastic.json", "eval_stochastic.csv", "mae.csv", "results.csv"),
    "export-plots": ("loss_curves.csv", "latents.csv", "order.csv", "metrics_table.csv"),
}


@pytest.fixture
def repeated_runs(workspace, tmp_path):
    assert run(["generate", *workspace["common"], "-o", str(workspace["data"])]) == EXIT_OK
    outs = [tmp_path / "first", tmp_path / "second"]
    for out in outs:
        common = [*workspace["common"][:-4], "--out", str(out), "--seed", "7"]
        assert run(["train", *common]) == EXIT_OK
        assert run(["sample", *common, "--index", "1", "--samples", "2"]) == EXIT_OK
        assert run(["eval", *common, "--label", "tiny"]) == EXIT_OK
        assert run(["export-plots", *common]) == EXIT_OK
    return outs


@pytest.mark.parametrize("command", sorted(RUN_OUTPUTS))
def test_repeated_runs_are_byte_identical(repeated_runs, command):
    first, second = repeated_runs
    for name in RUN_OUTPUTS[command]:
        assert sha256(first / name) == sha256(second / name), name
