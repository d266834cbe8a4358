"""
Binary parameter checkpoints.

Layout (little-endian): magic ``b"STCN"``, version u32, then one record per
parameter until end of file::

    name_len u32 | name (UTF-8) | rank u32 | dims u64 * rank | payload f64 * prod(dims)

Records are written in sorted name order so identical parameters always give
identical bytes.
"""

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from src.errors import CheckpointFormatError, MissingArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"STCN"
VERSION = 1


def atomic_write(path: Path, payload: bytes) -> None:
    """Write ``payload`` to a temp file in the target directory, then rename it into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def encode_checkpoint(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise CheckpointFormatError("unrecognized format: checkpoint magic mismatch")
    if len(data) < 8:
        raise CheckpointFormatError("checkpoint header truncated")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    offset = 8
    params: Dict[str, np.ndarray] = {}
    try:
        while offset < len(data):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            if len(name.encode("utf-8")) != name_len:
                raise CheckpointFormatError("checkpoint record name truncated")
            offset += name_len
            (rank,) = struct.unpack_from("<I", data, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", data, offset)
            offset += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            end = offset + 8 * count
            if end > len(data):
                raise CheckpointFormatError(f"checkpoint payload for '{name}' truncated")
            params[name] = np.frombuffer(data[offset:end], dtype="<f8").astype(np.float64).reshape(dims)
            offset = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"checkpoint record truncated at byte {offset}") from exc
    return params


def save_checkpoint(params: Mapping[str, np.ndarray], path: Union[str, Path]) -> Path:
    """Write ``params`` atomically (temp file then rename)."""
    path = Path(path)
    atomic_write(path, encode_checkpoint(params))
    logger.info(f"Checkpoint saved to {path} ({len(params)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def subset(params: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Entries whose names start with ``prefix``."""
    return {k: v for k, v in params.items() if k.startswith(prefix)}
