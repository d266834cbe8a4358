"""
Pipeline commands behind ``run_pipeline.py``.

Every command takes the resolved ExperimentConfig, writes its artefacts into
files, and records the resolved configuration as ``manifest_<command>.json``
next to them. Outputs carry no timestamps, so repeated runs with the same
flags and seed produce identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
from tabulate import tabulate

from src.autodiff.checkpoint import load_checkpoint
from src.config import ExperimentConfig, make_rng
from src.data.dataset import Dataset
from src.data.loader import load_dataset, save_dataset
from src.data.preprocessing import normalize_dataset, separation_ratio
from src.data.synthetic import generate_synthetic
from src.errors import MissingArtifactError
from src.evaluation.metrics import METRIC_COLUMNS, append_to_table
from src.evaluation.predictor import MotionPredictor, evaluate_dataset, mae_table, samples_to_frame
from src.models.anchors import ANCHOR_KEY, AnchorSet, anchors_to_frame
from src.models.networks import build_networks
from src.models.ode import EMBEDDED_METHODS, FIXED_METHODS, convergence_table
from src.models.train import Stage1Trainer, Stage2Trainer, pooled_latents

logger = logging.getLogger(__name__)

STAGE1_CKPT = "stage1.ckpt"
STAGE2_CKPT = "stage2.ckpt"
RESULTS_TABLE = "results.csv"
ORDER_METHODS = tuple(m for m in FIXED_METHODS if m != "discrete") + EMBEDDED_METHODS


def write_manifest(directory: Union[str, Path], command: str, config: ExperimentConfig,
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """Persist the resolved configuration of a command run."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "config": config.raw}
    if extra:
        manifest.update(extra)
    path = directory / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def _data_section(config: ExperimentConfig) -> Dict[str, Any]:
    return dict(config.raw.get("data") or {})


def _test_path(path: Path) -> Path:
    return path.with_name(f"{path.stem}_test{path.suffix}")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


def _train_set(config: ExperimentConfig) -> Dataset:
    return load_dataset(_require(Path(_data_section(config).get("path", "data/motion.stcm")), "dataset"))


def _test_set(config: ExperimentConfig) -> Dataset:
    data = _data_section(config)
    train_path = Path(data.get("path", "data/motion.stcm"))
    test_path = Path(data["test_path"]) if data.get("test_path") else _test_path(train_path)
    if test_path.exists():
        return load_dataset(test_path)
    logger.warning(f"No test set at {test_path}; evaluating on the training set")
    return load_dataset(_require(train_path, "dataset"))


def _pseudo_threshold(config: ExperimentConfig) -> float:
    if config.train.pseudo_threshold is not None:
        return config.train.pseudo_threshold
    return 2.0 * config.data.jitter_scale


def cmd_generate(config: ExperimentConfig, output: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """Generate the synthetic train set (and optionally a test set) plus a summary JSON."""
    data = _data_section(config)
    output = Path(output or data.get("path", "data/motion.stcm"))
    test_per_pattern = data.get("test_per_pattern")

    train = generate_synthetic(config.data, split="train")
    test = generate_synthetic(config.data, split="test", samples_per_pattern=test_per_pattern) \
        if test_per_pattern else None
    ratio = separation_ratio(train)
    if data.get("normalize", True):
        if test is not None:
            train, test = normalize_dataset(train, test)
        else:
            (train,) = normalize_dataset(train)

    save_dataset(train, output)
    summary = {
        "pattern_count": config.data.pattern_count,
        "samples_per_pattern": config.data.samples_per_pattern,
        "sequences": len(train),
        "frames": config.data.frames,
        "t_obs": config.data.t_obs,
        "t_pred": config.data.t_pred,
        "joints": config.data.joints,
        "jitter_scale": config.data.jitter_scale,
        "separation_ratio": ratio,
        "normalized": train.normalized,
        "files": [output.name],
    }
    if test is not None:
        save_dataset(test, _test_path(output))
        summary["test_sequences"] = len(test)
        summary["files"].append(_test_path(output).name)
    summary_path = output.with_name(f"{output.stem}_summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(output.parent, "generate", config, {"output": str(output)})
    print(tabulate([(k, v) for k, v in summary.items() if k != "files"], headers=["field", "value"]))
    return summary


def cmd_train(config: ExperimentConfig, stage: Optional[int] = None) -> Dict[str, Path]:
    """Stage 1 then stage 2, or one of them; writes checkpoints, loss logs and the anchors CSV."""
    out = config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dataset = _train_set(config)
    written: Dict[str, Path] = {}

    if stage in (None, 1):
        trainer = Stage1Trainer(dataset, config.model, config.solver, config.train, config.anchors,
                                config.seed, config.n_jobs)
        trainer.train().to_csv(out / "stage1_loss.csv", index=False)
        anchors = trainer.fit_anchors()
        anchors_to_frame(anchors).to_csv(out / "anchors.csv", index=False)
        written["stage1"] = trainer.save(out / STAGE1_CKPT)
        written["anchors"] = out / "anchors.csv"

    if stage in (None, 2):
        stage1 = load_checkpoint(_require(out / STAGE1_CKPT, "stage-1 checkpoint"))
        trainer = Stage2Trainer(dataset, stage1, config.model, config.solver, config.train, config.anchors,
                                config.seed, pseudo_threshold=_pseudo_threshold(config))
        trainer.train().to_csv(out / "stage2_loss.csv", index=False)
        written["stage2"] = trainer.save(out / STAGE2_CKPT)

    write_manifest(out, "train", config, {"stage": stage})
    return written


def _predictor(config: ExperimentConfig, dataset: Dataset) -> MotionPredictor:
    path = _require(config.output_dir / STAGE2_CKPT, "stage-2 checkpoint")
    return MotionPredictor.from_checkpoint(path, config.model, config.solver, dataset)


def cmd_sample(config: ExperimentConfig, index: int = 0, samples: Optional[int] = None,
               temperature: Optional[float] = None) -> Path:
    """Decode N x M futures for one test input and write them as CSV (raw coordinates)."""
    gmm = dict(config.raw.get("gmm") or {})
    m = int(samples if samples is not None else gmm.get("samples_per_anchor", 5))
    temperature = float(temperature if temperature is not None else gmm.get("temperature", 1.0))
    dataset = _test_set(config)
    if not 0 <= index < len(dataset):
        raise ValueError(f"input index {index} outside [0, {len(dataset)})")
    predictor = _predictor(config, dataset)
    rng = make_rng(config.seed, f"sample.input.{index}")
    drawn = predictor.sample(dataset.observed()[index], m, rng, temperature)
    drawn.futures = dataset.denormalize(drawn.futures)
    path = config.output_dir / f"samples_{index}.csv"
    samples_to_frame(drawn).to_csv(path, index=False, float_format="%.9g")
    logger.info(f"Wrote {len(drawn)} sampled sequences ({predictor.anchors.size} anchors x {m}) to {path}")
    write_manifest(config.output_dir, "sample", config, {"index": index, "samples": m, "temperature": temperature})
    return path


def cmd_eval(config: ExperimentConfig, label: Optional[str] = None) -> Dict[str, Any]:
    """Evaluate the stage-2 model on the test set; writes the report JSON and updates the results table."""
    out = config.output_dir
    test = _test_set(config)
    predictor = _predictor(config, test)
    label = label or out.name
    report, per_input = evaluate_dataset(predictor, test, config.eval, config.seed, label=label)
    protocol = config.eval.protocol
    report.to_json(out / f"metrics_{protocol}.json")
    per_input.to_csv(out / f"eval_{protocol}.csv", index=False, float_format="%.9g")
    if protocol == "stochastic":
        mae_table(per_input).to_csv(out / "mae.csv", index=False, float_format="%.9g")
    append_to_table(report, out / RESULTS_TABLE)
    write_manifest(out, "eval", config, {"label": label})
    row = report.to_row()
    print(tabulate([[row[c] for c in METRIC_COLUMNS]], headers=METRIC_COLUMNS, floatfmt=".4f"))
    return report.to_dict()


def cmd_export_plots(config: ExperimentConfig, run_dir: Optional[Union[str, Path]] = None) -> Dict[str, Path]:
    """Loss curves, latent scatter, solver-order fits and the metrics table as CSV."""
    run_dir = Path(run_dir or config.output_dir)
    _require(run_dir / STAGE1_CKPT, "stage-1 checkpoint")
    written: Dict[str, Path] = {}

    curves = []
    for stage in ("stage1", "stage2"):
        log_path = run_dir / f"{stage}_loss.csv"
        if log_path.exists():
            log = pd.read_csv(log_path)
            log.insert(0, "stage", stage)
            curves.append(log)
    if curves:
        written["loss_curves"] = run_dir / "loss_curves.csv"
        pd.concat(curves, ignore_index=True).to_csv(written["loss_curves"], index=False)

    dataset = _train_set(config)
    params = load_checkpoint(run_dir / STAGE1_CKPT)
    networks = build_networks(dataset.joints, dataset.coords, dataset.t_pred, config.model)
    latents = pooled_latents(params, networks, dataset.full(), config.train.batch_size)
    table = pd.DataFrame(latents, columns=[f"z{i}" for i in range(latents.shape[1])])
    table.insert(0, "anchor", AnchorSet(params[ANCHOR_KEY]).assign(latents) if ANCHOR_KEY in params else -1)
    table.insert(0, "label", dataset.labels)
    table.insert(0, "sample_id", np.arange(len(dataset)))
    written["latents"] = run_dir / "latents.csv"
    table.to_csv(written["latents"], index=False, float_format="%.9g")

    order = pd.concat([convergence_table(m) for m in ORDER_METHODS], ignore_index=True)
    written["order"] = run_dir / "order.csv"
    order.to_csv(written["order"], index=False, float_format="%.9g")

    results = run_dir / RESULTS_TABLE
    if results.exists():
        written["metrics_table"] = run_dir / "metrics_table.csv"
        pd.read_csv(results)[["run", "protocol", *METRIC_COLUMNS]].to_csv(
            written["metrics_table"], index=False, float_format="%.6f")
    if (run_dir / "mae.csv").exists():
        written["mae"] = run_dir / "mae.csv"

    write_manifest(run_dir, "export_plots", config)
    logger.info(f"Exported {', '.join(sorted(written))} to {run_dir}")
    return written
