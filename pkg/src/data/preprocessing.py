"""
Data preprocessing for motion datasets.

Observed/future splitting, per-coordinate normalisation, pose and trajectory
distances, deterministic batching and the planted-pattern oracles.
"""

import logging
from typing import Iterator, Tuple

import numpy as np
from sklearn.preprocessing import StandardScaler

from src.data.dataset import Dataset, MotionSequence

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

SEPARATION_FACTOR = 5.0


def split_observed_future(seq: MotionSequence, t_obs: int, t_pred: int) -> Tuple[MotionSequence, MotionSequence]:
    """
    Split a sequence into its observed prefix X and future Y.

    Both halves are views of ``seq.frames``; frames past ``t_obs + t_pred``
    are not part of either.

    Raises:
        ValueError: the sequence has fewer than ``t_obs + t_pred`` frames
    """
    if t_obs < 1 or t_pred < 1:
        raise ValueError(f"t_obs and t_pred must be >= 1, got {t_obs}, {t_pred}")
    required = t_obs + t_pred
    if seq.length < required:
        raise ValueError(f"sequence has {seq.length} frames, at least {required} required (T={t_obs}, H={t_pred})")
    observed = MotionSequence(seq.frames[:t_obs], seq.frame_rate)
    future = MotionSequence(seq.frames[t_obs:required], seq.frame_rate)
    return observed, future


class MotionPreprocessor:
    """Per-coordinate z-score normalisation fitted on a training set."""

    def __init__(self):
        self.scaler = StandardScaler()
        self.fitted = False

    def fit(self, dataset: Dataset) -> "MotionPreprocessor":
        flat = dataset.sequences.reshape(-1, dataset.dim)
        self.scaler.fit(flat)
        self.fitted = True
        logger.info(f"Fitted normalisation on {flat.shape[0]} frames x {dataset.dim} coordinates")
        return self

    @classmethod
    def from_stats(cls, mean: np.ndarray, std: np.ndarray) -> "MotionPreprocessor":
        pre = cls()
        pre.scaler.mean_ = np.asarray(mean, dtype=np.float64)
        pre.scaler.scale_ = np.asarray(std, dtype=np.float64)
        pre.scaler.var_ = pre.scaler.scale_ ** 2
        pre.scaler.n_features_in_ = pre.scaler.mean_.shape[0]
        pre.fitted = True
        return pre

    @property
    def mean(self) -> np.ndarray:
        return self.scaler.mean_

    @property
    def std(self) -> np.ndarray:
        return self.scaler.scale_

    def transform(self, dataset: Dataset) -> Dataset:
        if not self.fitted:
            raise ValueError("MotionPreprocessor.transform called before fit")
        if dataset.normalized:
            raise ValueError(f"{dataset.split} set is already normalised")
        shape = dataset.sequences.shape
        flat = self.scaler.transform(dataset.sequences.reshape(-1, dataset.dim))
        return Dataset(
            sequences=flat.reshape(shape),
            labels=dataset.labels,
            t_obs=dataset.t_obs,
            t_pred=dataset.t_pred,
            frame_rate=dataset.frame_rate,
            pattern_count=dataset.pattern_count,
            split=dataset.split,
            mean=self.mean,
            std=self.std,
        )


def normalize_dataset(train: Dataset, *others: Dataset) -> Tuple[Dataset, ...]:
    """
    Normalise ``train`` to zero mean / unit variance per coordinate and apply
    the same transform to every dataset in ``others``.
    """
    pre = MotionPreprocessor().fit(train)
    return tuple(pre.transform(d) for d in (train,) + others)


def pose_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Mean per-joint Euclidean distance between poses.

    Args:
        a, b: (..., V, C) arrays broadcastable against each other

    Returns:
        (...) distances
    """
    return np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1).mean(axis=-1)


def trajectory_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean over frames of ``pose_distance`` for (..., F, V, C) trajectories."""
    return pose_distance(a, b).mean(axis=-1)


def pattern_mean_futures(dataset: Dataset) -> np.ndarray:
    """(pattern_count, H, V, C) mean future of every planted pattern."""
    future = dataset.future()
    means = np.zeros((dataset.pattern_count,) + future.shape[1:])
    for k in range(dataset.pattern_count):
        members = future[dataset.labels == k]
        if len(members) == 0:
            raise ValueError(f"pattern {k} has no samples in the {dataset.split} set")
        means[k] = members.mean(axis=0)
    return means


def separation_ratio(dataset: Dataset) -> float:
    """
    Smallest distance between pattern mean futures divided by the largest
    within-pattern spread (mean distance of members to their pattern mean).

    Returns ``inf`` when there is no within-pattern spread.
    """
    means = pattern_mean_futures(dataset)
    future = dataset.future()
    spread = max(
        float(trajectory_distance(future[dataset.labels == k], means[k]).mean())
        for k in range(dataset.pattern_count)
    )
    if dataset.pattern_count == 1:
        between = np.inf
    else:
        between = min(
            float(trajectory_distance(means[i], means[j]))
            for i in range(dataset.pattern_count)
            for j in range(i + 1, dataset.pattern_count)
        )
    ratio = between / spread if spread > 0 else np.inf
    if ratio < SEPARATION_FACTOR:
        logger.warning(f"Planted patterns are only {ratio:.2f}x apart (wanted >= {SEPARATION_FACTOR}x)")
    return ratio


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Yield shuffled index batches covering ``range(n)`` exactly once."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
