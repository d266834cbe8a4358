"""
Data loader module for motion datasets.

Reads and writes the "STCM" binary format and exports per-frame CSV tables.

Layout (little-endian)::

    magic "STCM" | version u32 | V u32 | C u32 | n u32 | frames u32
    | t_obs u32 | t_pred u32 | frame_rate f64 | pattern_count u32
    | split u8 (0 train, 1 test) | normalized u8
    | [mean f64 * V*C | std f64 * V*C]     (only when normalized)
    | labels u32 * n
    | payload f64 * n*frames*V*C            (row-major)
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np
import pandas as pd

from src.autodiff.checkpoint import atomic_write
from src.data.dataset import SPLITS, Dataset
from src.errors import (
    DimensionMismatchError,
    MalformedHeaderError,
    MissingArtifactError,
    TruncatedPayloadError,
    UnrecognizedFormatError,
)

# Setup logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MAGIC = b"STCM"
VERSION = 1
HEADER = struct.Struct("<4sIIIIIIIdIBB")
AXES = ("x", "y", "z")


def encode_dataset(dataset: Dataset) -> bytes:
    n, frames, joints, coords = dataset.sequences.shape
    header = HEADER.pack(
        MAGIC, VERSION, joints, coords, n, frames, dataset.t_obs, dataset.t_pred,
        float(dataset.frame_rate), dataset.pattern_count,
        SPLITS.index(dataset.split), int(dataset.normalized),
    )
    chunks = [header]
    if dataset.normalized:
        chunks.append(np.ascontiguousarray(dataset.mean, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(dataset.std, dtype="<f8").tobytes())
    chunks.append(np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes())
    chunks.append(np.ascontiguousarray(dataset.sequences, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_dataset(data: bytes) -> Dataset:
    """
    Parse an STCM byte string.

    Raises:
        UnrecognizedFormatError: wrong magic bytes
        MalformedHeaderError: header too short, unsupported version or impossible fields
        TruncatedPayloadError: fewer bytes than the header promises
        DimensionMismatchError: extra bytes, or labels outside the pattern range
    """
    if data[:4] != MAGIC:
        raise UnrecognizedFormatError(f"unrecognized format: expected magic {MAGIC!r}, got {bytes(data[:4])!r}")
    if len(data) < HEADER.size:
        raise MalformedHeaderError(f"header needs {HEADER.size} bytes, file has {len(data)}")
    (_, version, joints, coords, n, frames, t_obs, t_pred,
     frame_rate, pattern_count, split, normalized) = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise MalformedHeaderError(f"unsupported dataset version {version}")
    if min(joints, coords, n, frames, pattern_count) == 0:
        raise MalformedHeaderError(
            f"zero-sized header field (V={joints}, C={coords}, n={n}, frames={frames}, patterns={pattern_count})"
        )
    if t_obs < 1 or t_pred < 1 or t_obs + t_pred > frames:
        raise MalformedHeaderError(f"t_obs={t_obs}, t_pred={t_pred} do not fit {frames} frames")
    if split >= len(SPLITS) or normalized > 1 or not np.isfinite(frame_rate) or frame_rate <= 0:
        raise MalformedHeaderError(f"bad header flags (split={split}, normalized={normalized}, frame_rate={frame_rate})")

    dim = joints * coords
    stats_bytes = 16 * dim if normalized else 0
    payload_count = n * frames * dim
    expected = HEADER.size + stats_bytes + 4 * n + 8 * payload_count
    if len(data) < expected:
        raise TruncatedPayloadError(f"file has {len(data)} bytes, header promises {expected}")
    if len(data) > expected:
        raise DimensionMismatchError(
            f"file has {len(data) - expected} bytes beyond the {n}x{frames}x{joints}x{coords} payload"
        )

    offset = HEADER.size
    mean = std = None
    if normalized:
        mean = np.frombuffer(data, dtype="<f8", count=dim, offset=offset).astype(np.float64)
        std = np.frombuffer(data, dtype="<f8", count=dim, offset=offset + 8 * dim).astype(np.float64)
        offset += stats_bytes
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=offset).astype(np.int64)
    offset += 4 * n
    if labels.max() >= pattern_count:
        raise DimensionMismatchError(f"label {labels.max()} out of range for {pattern_count} patterns")
    sequences = np.frombuffer(data, dtype="<f8", count=payload_count, offset=offset)
    sequences = sequences.astype(np.float64).reshape(n, frames, joints, coords)
    return Dataset(
        sequences=sequences,
        labels=labels,
        t_obs=t_obs,
        t_pred=t_pred,
        frame_rate=frame_rate,
        pattern_count=pattern_count,
        split=SPLITS[split],
        mean=mean,
        std=std,
    )


class MotionLoader:
    """Load an STCM dataset file."""

    def __init__(self, dataset_path: Union[str, Path]):
        """
        Args:
            dataset_path: Path to the .stcm file
        """
        self.dataset_path = Path(dataset_path)
        self.dataset = None

    def load(self) -> Dataset:
        if not self.dataset_path.exists():
            raise MissingArtifactError(f"dataset not found: {self.dataset_path}")
        self.dataset = decode_dataset(self.dataset_path.read_bytes())
        logger.info(f"Loaded {self.dataset.split} set from {self.dataset_path}: {self.dataset.sequences.shape}")
        return self.dataset

    def get_dataset_info(self) -> Dict[str, object]:
        """Summary of the loaded dataset (sizes, patterns, normalisation)."""
        if self.dataset is None:
            raise ValueError("dataset not loaded")
        d = self.dataset
        counts = np.bincount(d.labels, minlength=d.pattern_count)
        return {
            "split": d.split,
            "sequences": len(d),
            "frames": int(d.sequences.shape[1]),
            "joints": d.joints,
            "t_obs": d.t_obs,
            "t_pred": d.t_pred,
            "frame_rate": d.frame_rate,
            "pattern_count": d.pattern_count,
            "per_pattern": counts.tolist(),
            "normalized": d.normalized,
        }


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    atomic_write(path, encode_dataset(dataset))
    logger.info(f"Saved {dataset.split} set ({len(dataset)} sequences) to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    """
    Convenience function to load an STCM dataset.

    Args:
        path: Path to the .stcm file

    Returns:
        Dataset
    """
    return MotionLoader(path).load()


def coordinate_columns(joints: int, coords: int = 3) -> list:
    names = AXES if coords <= len(AXES) else tuple(f"c{i}" for i in range(coords))
    return [f"j{v}_{names[c]}" for v in range(joints) for c in range(coords)]


def dataset_to_frame(dataset: Dataset) -> pd.DataFrame:
    """One row per frame: sample_id, pattern, frame_index, then V*C coordinates."""
    n, frames, joints, coords = dataset.sequences.shape
    table = pd.DataFrame(dataset.sequences.reshape(n * frames, joints * coords),
                         columns=coordinate_columns(joints, coords))
    table.insert(0, "frame_index", np.tile(np.arange(frames), n))
    table.insert(0, "pattern", np.repeat(dataset.labels, frames))
    table.insert(0, "sample_id", np.repeat(np.arange(n), frames))
    return table


def export_csv(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dataset_to_frame(dataset).to_csv(path, index=False)
    logger.info(f"Exported {len(dataset)} sequences to {path}")
    return path
