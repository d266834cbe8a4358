"""
Motion sequence and dataset value types.

Coordinates are stored as float64 arrays of shape (frames, V, C). A Dataset
keeps all sequences in one (n, frames, V, C) block together with their planted
pattern labels and, when normalised, the per-coordinate mean/std used.
"""

import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MotionSequence:
    """A run of skeleton frames, shape (frames, V, C)."""

    frames: np.ndarray
    frame_rate: float = 50.0

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise ValueError(f"MotionSequence needs shape (frames>=1, V, C), got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("MotionSequence contains non-finite coordinates")
        if frames.flags.writeable:
            frames = frames.view()
            frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joints(self) -> int:
        return self.frames.shape[1]

    @property
    def dim(self) -> int:
        """Flattened per-frame dimension D = V * C."""
        return self.frames.shape[1] * self.frames.shape[2]

    def flat(self) -> np.ndarray:
        return self.frames.reshape(self.length, -1)

    def __len__(self) -> int:
        return self.length


@dataclass(frozen=True)
class Dataset:
    """
    Labelled motion sequences.

    Attributes:
        sequences: (n, frames, V, C) coordinates
        labels: (n,) planted pattern index per sequence
        t_obs: Observed frames T
        t_pred: Predicted frames H
        frame_rate: Frames per second
        pattern_count: Number of planted patterns
        split: "train" or "test"
        mean, std: (V*C,) normalisation applied to the coordinates, or None
    """

    sequences: np.ndarray
    labels: np.ndarray
    t_obs: int
    t_pred: int
    frame_rate: float
    pattern_count: int
    split: str = "train"
    mean: Optional[np.ndarray] = field(default=None)
    std: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        sequences = np.asarray(self.sequences, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if sequences.ndim != 4 or sequences.shape[0] == 0:
            raise ValueError(f"Dataset needs a non-empty (n, frames, V, C) array, got {sequences.shape}")
        if labels.shape != (sequences.shape[0],):
            raise ValueError(f"expected {sequences.shape[0]} labels, got {labels.shape}")
        if self.pattern_count < 1:
            raise ValueError("pattern_count must be >= 1")
        if labels.min() < 0 or labels.max() >= self.pattern_count:
            raise ValueError(f"labels must lie in [0, {self.pattern_count})")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.t_obs < 1 or self.t_pred < 1 or self.t_obs + self.t_pred > sequences.shape[1]:
            raise ValueError(
                f"t_obs={self.t_obs}, t_pred={self.t_pred} do not fit {sequences.shape[1]} frames"
            )
        if not np.all(np.isfinite(sequences)):
            raise ValueError("Dataset contains non-finite coordinates")
        object.__setattr__(self, "sequences", _frozen(sequences))
        labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        for name in ("mean", "std"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))

    def __len__(self) -> int:
        return self.sequences.shape[0]

    def __iter__(self) -> Iterator[Tuple[MotionSequence, int]]:
        for i in range(len(self)):
            yield self.sequence(i), int(self.labels[i])

    @property
    def joints(self) -> int:
        return self.sequences.shape[2]

    @property
    def coords(self) -> int:
        return self.sequences.shape[3]

    @property
    def dim(self) -> int:
        return self.joints * self.coords

    @property
    def normalized(self) -> bool:
        return self.mean is not None

    def sequence(self, index: int) -> MotionSequence:
        return MotionSequence(self.sequences[index], self.frame_rate)

    def observed(self) -> np.ndarray:
        """(n, T, V, C) observed prefixes X."""
        return self.sequences[:, :self.t_obs]

    def future(self) -> np.ndarray:
        """(n, H, V, C) futures Y."""
        return self.sequences[:, self.t_obs:self.t_obs + self.t_pred]

    def full(self) -> np.ndarray:
        """(n, T+H, V, C) observed plus future."""
        return self.sequences[:, :self.t_obs + self.t_pred]

    def frame_times(self) -> np.ndarray:
        """Timestamps of the H predicted frames, t_k = k / frame_rate."""
        return np.arange(1, self.t_pred + 1, dtype=np.float64) / self.frame_rate

    def denormalize(self, coords: np.ndarray) -> np.ndarray:
        """Map normalised (..., V, C) coordinates back to raw units."""
        if not self.normalized:
            return np.asarray(coords, dtype=np.float64)
        shape = np.shape(coords)
        flat = np.asarray(coords, dtype=np.float64).reshape(shape[:-2] + (-1,))
        return (flat * self.std + self.mean).reshape(shape)

    def equals(self, other: "Dataset") -> bool:
        """Bit-exact comparison of coordinates, labels and header fields."""
        same_norm = (self.mean is None) == (other.mean is None)
        if same_norm and self.mean is not None:
            same_norm = np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)
        return (
            same_norm
            and self.sequences.shape == other.sequences.shape
            and np.array_equal(self.sequences, other.sequences)
            and np.array_equal(self.labels, other.labels)
            and (self.t_obs, self.t_pred, self.frame_rate, self.pattern_count, self.split)
            == (other.t_obs, other.t_pred, other.frame_rate, other.pattern_count, other.split)
        )
