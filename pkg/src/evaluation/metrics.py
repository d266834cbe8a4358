"""
Diversity and accuracy metrics for stochastic motion prediction.

    APD    mean Frobenius distance over all ordered pairs of samples
    ADE    (1/f) min_i ||Y_i - Y*||, whole predicted sequence
    FDE    min_i ||Y_i[f] - Y*[f]||, last frame
    MMADE  ADE averaged over the futures grouped with the query by its last
    MMFDE  observed pose (and likewise for FDE)

Sample sets are (S, H, V, C) arrays; every norm is taken over the flattened
frames x joints x coordinates.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from src.data.preprocessing import pose_distance, trajectory_distance
from src.errors import ShapeError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["APD", "ADE", "FDE", "MMADE", "MMFDE"]


def _check_samples(samples: np.ndarray, truth: Optional[np.ndarray] = None) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim < 2 or samples.shape[0] == 0:
        raise ValueError(f"expected a non-empty (S, H, ...) sample set, got shape {samples.shape}")
    if truth is not None and samples.shape[1:] != np.shape(truth):
        raise ShapeError(f"samples of shape {samples.shape[1:]} do not match ground truth {np.shape(truth)}")
    return samples


def apd(samples: np.ndarray) -> float:
    """Average pairwise distance; 0 for a single sample."""
    samples = _check_samples(samples)
    if len(samples) == 1:
        return 0.0
    return float(pdist(samples.reshape(len(samples), -1)).mean())


def ade(samples: np.ndarray, truth: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    samples = _check_samples(samples, truth)
    errors = np.linalg.norm((samples - truth).reshape(len(samples), -1), axis=1)
    return float(errors.min() / truth.shape[0])


def fde(samples: np.ndarray, truth: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    samples = _check_samples(samples, truth)
    errors = np.linalg.norm((samples[:, -1] - truth[-1]).reshape(len(samples), -1), axis=1)
    return float(errors.min())


def multimodal_groups(last_observed: np.ndarray, threshold: float) -> List[np.ndarray]:
    """
    For each input, indices of inputs whose last observed pose lies within ``threshold``.

    Args:
        last_observed: (n, V, C) pose at the start of the prediction horizon
        threshold: Mean per-joint distance, >= 0

    Returns:
        One index array per input, always containing the input itself
    """
    if threshold < 0:
        raise ValueError(f"multimodal threshold must be >= 0, got {threshold}")
    poses = np.asarray(last_observed, dtype=np.float64)
    distances = pose_distance(poses[:, None], poses[None])
    groups = []
    for i, row in enumerate(distances):
        members = np.flatnonzero(row <= threshold)
        groups.append(members if i in members else np.union1d(members, [i]))
    return groups


def multimodal_errors(samples: np.ndarray, group_truths: np.ndarray) -> Tuple[float, float]:
    """ADE and FDE of one sample set averaged over its grouped futures."""
    pairs = [(ade(samples, y), fde(samples, y)) for y in group_truths]
    return float(np.mean([p[0] for p in pairs])), float(np.mean([p[1] for p in pairs]))


def multimodal_metrics(sample_sets: Sequence[np.ndarray], truths: np.ndarray, last_observed: np.ndarray,
                       threshold: float) -> Tuple[float, float]:
    """
    MMADE and MMFDE over a test set.

    Args:
        sample_sets: One (S, H, V, C) set per test input
        truths: (n, H, V, C) ground-truth futures
        last_observed: (n, V, C) last observed poses used for grouping
        threshold: Grouping distance

    Returns:
        Tuple of (mmade, mmfde)
    """
    truths = np.asarray(truths, dtype=np.float64)
    if len(sample_sets) != len(truths):
        raise ValueError(f"{len(sample_sets)} sample sets for {len(truths)} test inputs")
    groups = multimodal_groups(last_observed, threshold)
    per_input = [multimodal_errors(s, truths[g]) for s, g in zip(sample_sets, groups)]
    return float(np.mean([e[0] for e in per_input])), float(np.mean([e[1] for e in per_input]))


def mae_at_horizons(prediction: np.ndarray, truth: np.ndarray, frame_rate: float,
                    horizons_ms: Sequence[float]) -> Dict[int, float]:
    """
    Mean absolute coordinate error at the frames closest to each horizon.

    Horizons past the predicted length are skipped.
    """
    prediction = np.asarray(prediction, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if prediction.shape != truth.shape:
        raise ShapeError(f"prediction {prediction.shape} does not match ground truth {truth.shape}")
    out = {}
    for ms in horizons_ms:
        frame = int(round(ms / 1000.0 * frame_rate)) - 1
        if 0 <= frame < truth.shape[0]:
            out[int(ms)] = float(np.abs(prediction[frame] - truth[frame]).mean())
    return out


def patterns_hit(samples: np.ndarray, pattern_means: np.ndarray) -> np.ndarray:
    """Sorted planted-pattern indices that are the nearest mean future of some sample."""
    distances = trajectory_distance(np.asarray(samples)[:, None], np.asarray(pattern_means)[None])
    return np.unique(np.argmin(distances, axis=1))


def mode_coverage(sample_sets: Sequence[np.ndarray], pattern_means: np.ndarray) -> Tuple[float, float]:
    """
    Share of inputs whose samples reach every planted pattern, and the mean share of patterns reached.
    """
    count = len(pattern_means)
    hits = [len(patterns_hit(s, pattern_means)) for s in sample_sets]
    full = float(np.mean([h == count for h in hits]))
    return full, float(np.mean(hits) / count)


@dataclass
class MetricReport:
    """Aggregated metrics of one evaluation run."""

    apd: float
    ade: float
    fde: float
    mmade: float
    mmfde: float
    n_inputs: int = 0
    n_samples: int = 0
    mean_group_size: float = 1.0
    coverage: Optional[float] = None
    pattern_hit_rate: Optional[float] = None
    protocol: str = "stochastic"
    label: str = "run"

    def __post_init__(self):
        for name in ("apd", "ade", "fde", "mmade", "mmfde"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    def to_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Metric report written to {path}")
        return path

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "MetricReport":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_row(self) -> Dict[str, object]:
        """One results-table row: run label, protocol, then the five metric columns."""
        row = {"run": self.label, "protocol": self.protocol}
        row.update(dict(zip(METRIC_COLUMNS, (self.apd, self.ade, self.fde, self.mmade, self.mmfde))))
        row["coverage"] = self.coverage
        return row


def append_to_table(report: MetricReport, path: Union[str, Path]) -> pd.DataFrame:
    """
    Add ``report`` to a results CSV, replacing any earlier row with the same run label and protocol.
    """
    path = Path(path)
    row = pd.DataFrame([report.to_row()])
    if path.exists():
        table = pd.read_csv(path)
        keep = ~((table["run"] == report.label) & (table["protocol"] == report.protocol))
        table = pd.concat([table[keep], row], ignore_index=True)
    else:
        table = row
    table = table.sort_values(["run", "protocol"], kind="mergesort").reset_index(drop=True)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, float_format="%.6f")
    return table
