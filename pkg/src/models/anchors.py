"""
Anchor sets learned by K-means over pooled stage-1 latents.

Also provides nearest-anchor matching and the anchor loss
``min_n ||FC(a_n + mu_n) - h0||^2`` with the minimum routed to the achieving
anchor (ties to the lowest index).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.cluster import kmeans_plusplus

from src.autodiff import tensor as T
from src.autodiff.tensor import Node
from src.errors import ShapeError
from src.models.layers import Linear

logger = logging.getLogger(__name__)

ANCHOR_KEY = "anchors.centers"
TARGETS = ("initial_latent", "pooled_latent")


@dataclass
class AnchorConfig:
    count: int = 20
    restarts: int = 8
    max_iters: int = 100
    target: str = "initial_latent"

    def validate(self) -> None:
        if self.count < 1:
            raise ValueError(f"anchor count must be >= 1, got {self.count}")
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be >= 1")
        if self.target not in TARGETS:
            raise ValueError(f"anchors.target must be one of {TARGETS}, got {self.target!r}")


@dataclass(frozen=True)
class AnchorSet:
    """N anchors in latent space, shape (N, latent_dim)."""

    centers: np.ndarray

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64)
        if centers.ndim != 2 or centers.shape[0] < 1:
            raise ValueError(f"AnchorSet needs an (N>=1, d) array, got {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise ValueError("anchors must be finite")
        if centers.shape[0] > 1:
            gaps = np.sum((centers[:, None] - centers[None]) ** 2, axis=-1)
            np.fill_diagonal(gaps, np.inf)
            if gaps.min() <= 0:
                raise ValueError("anchors must be pairwise distinct")
        centers = centers.copy()
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def distances(self, latents: np.ndarray) -> np.ndarray:
        """(..., N) squared distances."""
        latents = np.asarray(latents, dtype=np.float64)
        if latents.shape[-1] != self.dim:
            raise ShapeError(f"latent dimension {latents.shape[-1]} does not match anchors ({self.dim})")
        diff = latents[..., None, :] - self.centers
        return np.einsum("...nd,...nd->...n", diff, diff)

    def assign(self, latents: np.ndarray) -> np.ndarray:
        """Nearest anchor index for every latent (ties to the lowest index)."""
        return np.argmin(self.distances(latents), axis=-1)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia: float
    history: List[float] = field(default_factory=list)
    n_iter: int = 0
    seed: Optional[int] = None


def restart_seeds(seed: int, restarts: int) -> List[int]:
    """Independent integer seeds for each restart."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(restarts)]


def _squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centers[None]
    return np.einsum("ind,ind->in", diff, diff)


def kmeans_single(latents: np.ndarray, n: int, seed: int, max_iters: int = 100) -> KMeansResult:
    """
    One Lloyd run from k-means++ seeding.

    ``history`` holds the within-cluster sum of squares after every
    assignment step; it never increases.
    """
    x = np.asarray(latents, dtype=np.float64)
    centers, _ = kmeans_plusplus(x, n_clusters=n, random_state=seed)
    centers = centers.astype(np.float64)
    labels = None
    history = []
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        d2 = _squared_distances(x, centers)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        point_cost = d2[np.arange(len(x)), labels]
        for j in range(n):
            members = labels == j
            if np.any(members):
                centers[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(point_cost))
                logger.warning(f"Empty cluster {j}; re-seeding to farthest point {far}")
                centers[j] = x[far]
                point_cost[far] = 0.0
    d2 = _squared_distances(x, centers)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return KMeansResult(centers, labels, inertia, history, n_iter, seed)


def fit_kmeans(latents: np.ndarray, n: int, restarts: int = 8, max_iters: int = 100,
               seed: int = 0, n_jobs: int = 1) -> KMeansResult:
    """
    Best of ``restarts`` seeded Lloyd runs by within-cluster sum of squares.

    Raises:
        ValueError: fewer than ``n`` distinct latents
    """
    x = np.asarray(latents, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"kmeans expects (points, dim) latents, got {x.shape}")
    distinct = np.unique(x, axis=0).shape[0]
    if distinct < n:
        raise ValueError(f"kmeans needs at least {n} distinct latents, got {distinct}")
    seeds = restart_seeds(seed, restarts)
    runs = Parallel(n_jobs=n_jobs)(delayed(kmeans_single)(x, n, s, max_iters) for s in seeds)
    best = min(range(len(runs)), key=lambda i: (runs[i].inertia, i))
    logger.info(
        f"K-means: {n} anchors over {len(x)} latents, best of {restarts} restarts "
        f"(inertia={runs[best].inertia:.4f}, {runs[best].n_iter} iterations)"
    )
    return runs[best]


def kmeans(latents: np.ndarray, n: int, restarts: int = 8, max_iters: int = 100,
           seed: int = 0, n_jobs: int = 1) -> AnchorSet:
    """Anchor set from the best K-means restart."""
    return AnchorSet(fit_kmeans(latents, n, restarts, max_iters, seed, n_jobs).centers)


def nearest_anchor(z: np.ndarray, anchors: AnchorSet) -> int:
    """Index of the closest anchor (ties to the lowest index)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ShapeError(f"nearest_anchor expects a single latent vector, got shape {z.shape}")
    return int(anchors.assign(z))


class AnchorFC:
    """Square linear map applied to offset anchors; initialised to the identity."""

    def __init__(self, dim: int, name: str = "anchor_fc"):
        self.dim = dim
        self.linear = Linear(name, dim, dim)

    def init(self, rng: Optional[np.random.Generator] = None) -> dict:
        return {self.linear.weight_key: np.eye(self.dim), self.linear.bias_key: np.zeros(self.dim)}

    def __call__(self, p: Mapping[str, Node], x: Node) -> Node:
        return self.linear(p, x)


def anchor_loss(anchors: AnchorSet, offsets, h0, fc: AnchorFC, p: Mapping[str, Node]) -> Node:
    """
    ``min_n ||FC(a_n + mu_n) - h0||^2``, averaged over the batch.

    Args:
        anchors: AnchorSet with N anchors
        offsets: (N, d) or (B, N, d) offsets mu
        h0: (d,) or (B, d) target initial latent (treated as a constant)
        fc: AnchorFC
        p: Parameter nodes containing the FC weights

    Returns:
        Scalar node; gradient flows only through the minimising anchor
    """
    offsets = offsets if isinstance(offsets, Node) else T.constant(offsets)
    target = np.asarray(h0.value if isinstance(h0, Node) else h0, dtype=np.float64)
    single = offsets.ndim == 2
    if single:
        offsets = T.reshape(offsets, (1,) + offsets.shape)
        target = target[None]
    batch, n, d = offsets.shape
    if n != anchors.size or d != anchors.dim or target.shape != (batch, d):
        raise ShapeError(
            f"anchor_loss: offsets {offsets.shape}, target {target.shape} "
            f"do not match {anchors.size} anchors of dimension {anchors.dim}"
        )
    transformed = fc(p, offsets + anchors.centers)
    goal = np.broadcast_to(target[:, None, :], (batch, n, d))
    per_anchor = T.square(transformed - goal).sum(axis=-1)
    best = np.argmin(per_anchor.value, axis=1)
    return T.pick(per_anchor, best).mean()


def anchors_to_frame(anchors: AnchorSet) -> pd.DataFrame:
    """One row per anchor: anchor index, then latent coordinates."""
    table = pd.DataFrame(anchors.centers, columns=[f"z{i}" for i in range(anchors.dim)])
    table.insert(0, "anchor", np.arange(anchors.size))
    return table
