"""
Anchor-conditioned Gaussian mixture over latents.

Component n sits at ``a_n + mu_n(X)`` with diagonal covariance ``Sigma_n(X)``
and weight ``Q_n = softmax(r(X))_n``. Densities are evaluated in log space.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from src.autodiff import tensor as T
from src.autodiff.tensor import Node
from src.errors import ShapeError
from src.models.anchors import AnchorSet

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


def anchor_probabilities(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max subtraction."""
    return softmax(np.asarray(logits, dtype=np.float64), axis=-1)


def component_log_density(z: np.ndarray, mean: np.ndarray, diag_cov: np.ndarray) -> np.ndarray:
    """
    Log density of a diagonal-covariance normal.

    Raises:
        ValueError: a variance is not strictly positive
    """
    z, mean, var = (np.asarray(a, dtype=np.float64) for a in (z, mean, diag_cov))
    if np.any(var <= 0):
        raise ValueError("component variances must be > 0")
    if z.shape[-1] != mean.shape[-1] or mean.shape[-1] != var.shape[-1]:
        raise ShapeError(f"dimension mismatch: z {z.shape}, mean {mean.shape}, cov {var.shape}")
    d = z.shape[-1]
    return -0.5 * (d * LOG_2PI + np.sum(np.log(var), axis=-1) + np.sum((z - mean) ** 2 / var, axis=-1))


def component_density(z: np.ndarray, mean: np.ndarray, diag_cov: np.ndarray) -> np.ndarray:
    return np.exp(component_log_density(z, mean, diag_cov))


@dataclass(frozen=True)
class MixtureHead:
    """
    Mixture parameters for one input.

    Attributes:
        q: (N,) component probabilities
        means: (N, d) component means a_n + mu_n
        covs: (N, d) diagonal variances
    """

    q: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        covs = np.asarray(self.covs, dtype=np.float64)
        if q.ndim != 1 or means.shape != (q.shape[0], means.shape[-1]) or covs.shape != means.shape:
            raise ShapeError(f"MixtureHead shapes disagree: q {q.shape}, means {means.shape}, covs {covs.shape}")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ValueError("mixture probabilities must be non-negative and sum to 1")
        if np.any(covs <= 0):
            raise ValueError("mixture variances must be > 0")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @classmethod
    def from_refine(cls, logits: np.ndarray, anchors: AnchorSet, offsets: np.ndarray,
                    covs: np.ndarray) -> "MixtureHead":
        if np.shape(logits)[-1] != anchors.size:
            raise ShapeError(f"{np.shape(logits)[-1]} logits for {anchors.size} anchors")
        return cls(anchor_probabilities(logits), anchors.centers + np.asarray(offsets), covs)

    @property
    def size(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def mixture_log_density(z: np.ndarray, head: MixtureHead) -> np.ndarray:
    """log sum_n Q_n N(z | mean_n, cov_n) for (..., d) points."""
    z = np.asarray(z, dtype=np.float64)
    comp = component_log_density(z[..., None, :], head.means, head.covs)
    with np.errstate(divide="ignore"):
        log_q = np.log(head.q)
    return logsumexp(comp + log_q, axis=-1)


def mixture_density(z: np.ndarray, head: MixtureHead) -> np.ndarray:
    return np.exp(mixture_log_density(z, head))


def top_components(head: MixtureHead, k: int) -> np.ndarray:
    """Indices of the ``k`` most probable components, ties to the lower index."""
    order = np.lexsort((np.arange(head.size), -head.q))
    return order[:k]


def sample_latents(head: MixtureHead, m: int, rng: np.random.Generator,
                   temperature: float = 1.0, components=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Stratified sampling: exactly ``m`` draws from every listed component.

    Args:
        head: Mixture parameters
        m: Samples per component
        rng: Random stream (one per input for reproducibility)
        temperature: Scales the standard deviations; 0 returns the means
        components: Component indices to draw from (all, anchor-major, by default)

    Returns:
        Tuple of (latents (S, d), component index per sample, sample index per sample)
    """
    if m < 1:
        raise ValueError(f"samples per anchor must be >= 1, got {m}")
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    components = np.arange(head.size) if components is None else np.asarray(components, dtype=np.int64)
    eps = rng.standard_normal((len(components), m, head.dim))
    std = np.sqrt(head.covs[components])[:, None, :] * temperature
    latents = head.means[components][:, None, :] + std * eps
    anchor_idx = np.repeat(components, m)
    sample_idx = np.tile(np.arange(m), len(components))
    return latents.reshape(-1, head.dim), anchor_idx, sample_idx


def nll_loss(logits: Node, offsets: Node, log_var: Node, anchors: AnchorSet,
             targets: np.ndarray, matched: np.ndarray) -> Node:
    """
    Negative log-likelihood of the ground-truth latents under their matched component.

        -[log Q_k + log N(s | a_k + mu_k, Sigma_k)],  k = matched index, averaged over the batch

    Args:
        logits: (B, N) anchor scores
        offsets: (B, N, d) offsets mu
        log_var: (B, N, d) log variances
        anchors: AnchorSet
        targets: (B, d) ground-truth latents s
        matched: (B,) matched anchor indices

    Raises:
        IndexError: a matched index is outside [0, N)
    """
    matched = np.asarray(matched, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    batch, n = logits.shape
    if np.any(matched < 0) or np.any(matched >= n):
        raise IndexError(f"matched anchor index out of range for {n} anchors")
    if targets.shape != (batch, anchors.dim) or matched.shape != (batch,):
        raise ShapeError(f"nll_loss: targets {targets.shape}, matched {matched.shape} for batch {batch}")
    log_q = T.pick(T.log_softmax(logits, axis=-1), matched)
    mean = T.pick(offsets, matched) + anchors.centers[matched]
    lv = T.pick(log_var, matched)
    diff = T.constant(targets) - mean
    log_n = -0.5 * (anchors.dim * LOG_2PI + lv.sum(axis=-1) + (T.square(diff) * T.exp(-lv)).sum(axis=-1))
    return -(log_q + log_n).mean()
