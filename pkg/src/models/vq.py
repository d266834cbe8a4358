"""
Vector quantisation of latent rows.

Each latent row is replaced by its nearest codeword; the training loss
combines reconstruction, a codebook term and a commitment term, with the
straight-through estimator carrying reconstruction gradients past the
argmin.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.autodiff import tensor as T
from src.autodiff.tensor import Node, stop_gradient, value_of
from src.errors import ShapeError

logger = logging.getLogger(__name__)

CODEBOOK_KEY = "codebook.entries"


@dataclass(frozen=True)
class Codebook:
    """K codewords of dimension l_dim, stored as a (K, l_dim) array."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ValueError(f"codebook needs at least one entry, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("codebook entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def initialize(cls, size: int, dim: int, rng: np.random.Generator) -> "Codebook":
        """Uniform(-1/K, 1/K) initialisation."""
        if size < 1:
            raise ValueError(f"codebook size must be >= 1, got {size}")
        return cls(rng.uniform(-1.0 / size, 1.0 / size, size=(size, dim)))


def squared_distances(z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """(..., K) squared Euclidean distances from every row of ``z`` to every codeword."""
    diff = z[..., None, :] - entries
    return np.einsum("...kd,...kd->...k", diff, diff)


def quantize(z, book: Codebook) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest-codeword quantisation.

    Args:
        z: (..., l_dim) latent rows (array or Node value)
        book: Codebook

    Returns:
        Tuple of (quantised rows, indices); ties resolve to the lowest index

    Raises:
        ValueError: empty codebook
        ShapeError: row dimension differs from the codeword dimension
    """
    entries = book.entries if isinstance(book, Codebook) else np.asarray(book, dtype=np.float64)
    if entries.ndim != 2 or entries.shape[0] == 0:
        raise ValueError("cannot quantize against an empty codebook")
    z = np.asarray(value_of(z), dtype=np.float64)
    if z.shape[-1] != entries.shape[1]:
        raise ShapeError(f"latent rows have dimension {z.shape[-1]}, codewords {entries.shape[1]}")
    indices = np.argmin(squared_distances(z, entries), axis=-1)
    return entries[indices], indices


def lookup(codebook: Node, indices: np.ndarray) -> Node:
    """Differentiable gather of codeword rows; gradients land on the selected entries."""
    return T.take(codebook, indices, axis=0)


def straight_through(z: Node, z_q) -> Node:
    """Forward value ``z_q``; gradient passes to ``z`` unchanged (z + sg(z_q - z))."""
    if tuple(np.shape(value_of(z))) != tuple(np.shape(value_of(z_q))):
        raise ShapeError(f"straight_through needs equal shapes, got {np.shape(value_of(z))} and {np.shape(value_of(z_q))}")
    return z + stop_gradient(T.sub(z_q, z))


def reconstruction_error(y, y_hat) -> Node:
    """Per-joint Euclidean distance summed over frames and joints (last axis = coordinates)."""
    return T.l2norm(T.sub(y, y_hat), axis=-1).sum()


def vq_loss_terms(y, y_hat, z, z_q, batch_mean: bool = False) -> Dict[str, Node]:
    """Reconstruction, codebook and (unweighted) commitment terms of ``vq_loss``."""
    z_q = T.constant(z_q) if not isinstance(z_q, Node) else z_q
    z = T.constant(z) if not isinstance(z, Node) else z
    if z.shape != z_q.shape:
        raise ShapeError(f"vq_loss: latent shapes differ, {z.shape} vs {z_q.shape}")
    terms = {
        "recon": reconstruction_error(y, y_hat),
        "codebook": T.square(z_q - stop_gradient(z)).sum(),
        "commitment": T.square(stop_gradient(z_q) - z).sum(),
    }
    if batch_mean:
        scale = 1.0 / z.shape[0]
        terms = {k: v * scale for k, v in terms.items()}
    return terms


def vq_loss(y, y_hat, z, z_q, beta: float = 0.25, batch_mean: bool = False) -> Node:
    """
    Reconstruction + codebook + commitment loss.

        sum_t sum_v ||y - y_hat|| + ||z_q - sg(z)||^2 + beta * ||sg(z_q) - z||^2

    Squared norms are summed over every latent row. With ``batch_mean`` the
    leading axis is a batch and the total is divided by its size.

    Raises:
        ValueError: beta < 0
    """
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    terms = vq_loss_terms(y, y_hat, z, z_q, batch_mean)
    return terms["recon"] + terms["codebook"] + beta * terms["commitment"]


def codeword_usage(indices: np.ndarray, size: int) -> np.ndarray:
    return np.bincount(np.asarray(indices).ravel(), minlength=size)


def reseed_dead_codewords(entries: np.ndarray, usage: np.ndarray, latents: np.ndarray,
                          rng: np.random.Generator) -> Tuple[np.ndarray, int]:
    """
    Replace codewords that were never selected with random encoder outputs.

    Args:
        entries: (K, l_dim) codebook
        usage: (K,) selection counts over the last epoch
        latents: (M, l_dim) encoder output rows to draw from

    Returns:
        Tuple of (new entries, number re-seeded)
    """
    dead = np.flatnonzero(usage == 0)
    if dead.size == 0 or len(latents) == 0:
        return entries, 0
    entries = np.array(entries, dtype=np.float64)
    picks = rng.choice(len(latents), size=dead.size, replace=len(latents) < dead.size)
    entries[dead] = latents[picks]
    logger.warning(f"Re-seeded {dead.size} dead codewords from encoder outputs")
    return entries, int(dead.size)
