"""
Sampling and evaluation on a trained stage-2 model.

Protocols:
    stochastic     argmax-Q component x M draws for ADE/FDE; top-k components
                   x M draws for APD and the multimodal metrics
    deterministic  the argmax-Q component mean, decoded once (APD = 0)
    ground_truth   the true future as the only sample (ADE = FDE = 0)
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.autodiff import tensor as T
from src.autodiff.checkpoint import load_checkpoint
from src.config import derive_seed
from src.data.dataset import Dataset
from src.data.loader import coordinate_columns
from src.data.preprocessing import pattern_mean_futures
from src.evaluation.metrics import (
    MetricReport, ade, apd, fde, mae_at_horizons, multimodal_errors, multimodal_groups, patterns_hit,
)
from src.models.anchors import ANCHOR_KEY, AnchorSet
from src.models.gmm import MixtureHead, sample_latents, top_components
from src.models.layers import as_nodes
from src.models.networks import ModelConfig, build_networks
from src.models.ode import SolverConfig

logger = logging.getLogger(__name__)

PROTOCOLS = ("stochastic", "deterministic", "ground_truth")


@dataclass
class EvalConfig:
    protocol: str = "stochastic"
    top_k: int = 5
    samples_per_component: int = 50
    coverage_samples: int = 5
    mm_threshold: float = 0.1
    temperature: float = 1.0
    horizons_ms: List[float] = field(default_factory=lambda: [80, 160, 320, 400, 560, 1000])
    n_jobs: int = 1

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"eval.protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.top_k < 1 or self.samples_per_component < 1 or self.coverage_samples < 1:
            raise ValueError("top_k, samples_per_component and coverage_samples must be >= 1")
        if self.mm_threshold < 0:
            raise ValueError(f"eval.mm_threshold must be >= 0, got {self.mm_threshold}")
        if self.temperature < 0:
            raise ValueError(f"eval.temperature must be >= 0, got {self.temperature}")


@dataclass
class SampleSet:
    """Decoded futures (S, H, V, C) with the component and draw index of each."""

    futures: np.ndarray
    anchor_idx: np.ndarray
    sample_idx: np.ndarray
    q: np.ndarray

    def __len__(self) -> int:
        return len(self.futures)


class MotionPredictor:
    """Stage-2 model wrapped for inference on single observed prefixes."""

    def __init__(self, params: Dict[str, np.ndarray], model_config: ModelConfig, solver: SolverConfig,
                 joints: int, coords: int, horizon: int, frame_rate: float):
        if ANCHOR_KEY not in params:
            raise ValueError("stage-2 parameters carry no anchor set")
        self.params = params
        self.anchors = AnchorSet(params[ANCHOR_KEY])
        self.networks = build_networks(joints, coords, horizon, model_config, anchor_count=self.anchors.size)
        self.solver = solver
        self.frame_rate = frame_rate
        self.frame_times = np.arange(1, horizon + 1, dtype=np.float64) / frame_rate

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path], model_config: ModelConfig, solver: SolverConfig,
                        dataset: Dataset) -> "MotionPredictor":
        return cls(load_checkpoint(path), model_config, solver, dataset.joints, dataset.coords,
                   dataset.t_pred, dataset.frame_rate)

    def _encode(self, observed: np.ndarray) -> np.ndarray:
        return self.networks.encoder(as_nodes(self.params), np.asarray(observed, dtype=np.float64)[None]).value

    def mixture(self, observed: np.ndarray) -> MixtureHead:
        """Anchor probabilities, component means and variances for one (T, V, C) prefix."""
        z_obs = self._encode(observed)
        logits, offsets, log_var = self.networks.refine(as_nodes(self.params), z_obs)
        return MixtureHead.from_refine(logits.value[0], self.anchors, offsets.value[0], np.exp(log_var.value[0]))

    def decode_latents(self, observed: np.ndarray, latents: np.ndarray) -> np.ndarray:
        """(S, H, V, C) futures decoded from (S, d) latents, conditioned on the observed prefix."""
        p = as_nodes(self.params)
        z_obs = self._encode(observed)
        latents = np.asarray(latents, dtype=np.float64)
        h0 = self.networks.fc(p, T.constant(latents))
        z_x = np.repeat(z_obs, len(latents), axis=0)
        return self.networks.decoder.predict(p, None, z_x, self.frame_times, self.solver, h0=h0).value

    def sample(self, observed: np.ndarray, m: int, rng: np.random.Generator, temperature: float = 1.0,
               components: Optional[Sequence[int]] = None) -> SampleSet:
        """``m`` decoded draws from each listed component (all anchors by default)."""
        head = self.mixture(observed)
        latents, anchor_idx, sample_idx = sample_latents(head, m, rng, temperature, components)
        return SampleSet(self.decode_latents(observed, latents), anchor_idx, sample_idx, head.q)

    def predict_mean(self, observed: np.ndarray) -> np.ndarray:
        """(1, H, V, C) decode of the most probable component's mean."""
        head = self.mixture(observed)
        best = top_components(head, 1)
        return self.decode_latents(observed, head.means[best])


def samples_to_frame(samples: SampleSet) -> pd.DataFrame:
    """One row per (sample, frame): anchor, sample, q, frame, then joint coordinates."""
    s, h, v, c = samples.futures.shape
    table = pd.DataFrame(samples.futures.reshape(s * h, v * c), columns=coordinate_columns(v, c))
    table.insert(0, "frame", np.tile(np.arange(h), s))
    table.insert(0, "q", np.repeat(samples.q[samples.anchor_idx], h))
    table.insert(0, "sample", np.repeat(samples.sample_idx, h))
    table.insert(0, "anchor", np.repeat(samples.anchor_idx, h))
    return table


def _evaluate_input(predictor: MotionPredictor, observed: np.ndarray, truth: np.ndarray,
                    group_truths: np.ndarray, pattern_means: Optional[np.ndarray],
                    config: EvalConfig, seed: int) -> Dict[str, object]:
    """Metrics of one test input under ``config.protocol``."""
    rng = np.random.default_rng(seed)
    m = config.samples_per_component
    row: Dict[str, object] = {}
    if config.protocol == "ground_truth":
        accuracy_set = diversity_set = truth[None]
        point = truth
    elif config.protocol == "deterministic":
        accuracy_set = diversity_set = predictor.predict_mean(observed)
        point = accuracy_set[0]
    else:
        head = predictor.mixture(observed)
        top = top_components(head, min(config.top_k, head.size))
        drawn = predictor.sample(observed, m, rng, config.temperature, components=top)
        diversity_set = drawn.futures
        # components are drawn in rank order, so the first block is the argmax-Q component
        accuracy_set = drawn.futures[:m]
        point = predictor.decode_latents(observed, head.means[top[:1]])[0]
        row["q_max"] = float(head.q[top[0]])
    row["apd"] = apd(diversity_set)
    row["ade"] = ade(accuracy_set, truth)
    row["fde"] = fde(accuracy_set, truth)
    row["mmade"], row["mmfde"] = multimodal_errors(diversity_set, group_truths)
    row["group_size"] = len(group_truths)
    row["n_samples"] = len(diversity_set)
    for ms, err in mae_at_horizons(point, truth, predictor.frame_rate, config.horizons_ms).items():
        row[f"mae_{ms}ms"] = err
    if pattern_means is not None:
        if config.protocol == "stochastic":
            coverage_set = predictor.sample(observed, config.coverage_samples, rng, config.temperature).futures
        else:
            coverage_set = diversity_set
        row["patterns_hit"] = len(patterns_hit(coverage_set, pattern_means))
    return row


def evaluate_dataset(predictor: MotionPredictor, test: Dataset, config: EvalConfig, seed: int = 42,
                     label: str = "run") -> Tuple[MetricReport, pd.DataFrame]:
    """
    Evaluate every test input and aggregate the metric report.

    Each input draws from its own seed stream, so results do not depend on
    ``n_jobs``.

    Returns:
        Tuple of (MetricReport, per-input DataFrame)
    """
    config.validate()
    observed, future = test.observed(), test.future()
    groups = multimodal_groups(test.denormalize(observed[:, -1]), config.mm_threshold)
    pattern_means = pattern_mean_futures(test) if np.all(np.bincount(test.labels, minlength=test.pattern_count) > 0) else None
    logger.info(
        f"Evaluating {len(test)} inputs ({config.protocol} protocol, "
        f"mean MM group size {np.mean([len(g) for g in groups]):.1f})"
    )
    rows = Parallel(n_jobs=config.n_jobs)(
        delayed(_evaluate_input)(predictor, observed[i], future[i], future[groups[i]], pattern_means,
                                 config, derive_seed(seed, f"eval.input.{i}"))
        for i in range(len(test))
    )
    table = pd.DataFrame(rows)
    table.insert(0, "label", test.labels)
    table.insert(0, "input", np.arange(len(test)))
    coverage = hit_rate = None
    if pattern_means is not None:
        coverage = float((table["patterns_hit"] == test.pattern_count).mean())
        hit_rate = float(table["patterns_hit"].mean() / test.pattern_count)
    report = MetricReport(
        apd=float(table["apd"].mean()),
        ade=float(table["ade"].mean()),
        fde=float(table["fde"].mean()),
        mmade=float(table["mmade"].mean()),
        mmfde=float(table["mmfde"].mean()),
        n_inputs=len(test),
        n_samples=int(table["n_samples"].iloc[0]),
        mean_group_size=float(table["group_size"].mean()),
        coverage=coverage,
        pattern_hit_rate=hit_rate,
        protocol=config.protocol,
        label=label,
    )
    logger.info(
        f"APD={report.apd:.4f} ADE={report.ade:.4f} FDE={report.fde:.4f} "
        f"MMADE={report.mmade:.4f} MMFDE={report.mmfde:.4f} coverage={report.coverage}"
    )
    return report, table


def mae_table(per_input: pd.DataFrame) -> pd.DataFrame:
    """Mean absolute error per horizon (ms) averaged over inputs."""
    columns = [c for c in per_input.columns if c.startswith("mae_")]
    return pd.DataFrame({
        "horizon_ms": [int(c[len("mae_"):-len("ms")]) for c in columns],
        "mae": [float(per_input[c].mean()) for c in columns],
    })
