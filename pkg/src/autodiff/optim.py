"""
Adam optimiser, learning-rate schedule and gradient clipping.

Parameters and gradients travel as plain dicts of name -> ndarray so the
trainers can update any subset (frozen parts are simply left out).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from src.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""

    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            v={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        )


def learning_rate(epoch: int, lr0: float = 1e-4, decay: float = 0.98, every: int = 10) -> float:
    """Step decay: ``lr0 * decay ** floor(epoch / every)``."""
    return lr0 * decay ** (epoch // every)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Params, float]:
    """
    Scale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns:
        Tuple of (clipped gradients, norm before clipping)
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or max_norm <= 0 or total <= max_norm:
        return dict(grads), total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[Params, AdamState]:
    """
    One Adam update with bias correction.

    Parameters without an entry in ``grads`` are treated as having a zero
    gradient.

    Raises:
        NonFiniteError: a gradient contains NaN/Inf (message names the parameter)
        ShapeError: a moment estimate does not match its parameter
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"gradient of parameter '{name}' is not finite")

    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads.get(name, np.zeros_like(p)), dtype=np.float64)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape or g.shape != p.shape:
            raise ShapeError(
                f"Adam state for '{name}' has shape {m.shape}/{v.shape}, "
                f"gradient {g.shape}, parameter {p.shape}"
            )
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v)
