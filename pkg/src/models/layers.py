"""
Small building blocks on the autodiff Node API.

Every layer is a light object holding its parameter names and shapes. It can
initialise a parameter dict (``init``) and run a forward pass given a mapping
of name -> Node (``__call__``), so the same layer serves training (trainable
leaves) and inference (constant leaves).
"""

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from src.autodiff import tensor as T
from src.autodiff.tensor import Node

logger = logging.getLogger(__name__)

Params = Dict[str, np.ndarray]


class Linear:
    """Affine map ``x @ W + b`` over the last axis."""

    def __init__(self, name: str, in_dim: int, out_dim: int, bias: bool = True,
                 init_scale: Optional[float] = None):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.bias = bias
        self.init_scale = init_scale

    @property
    def weight_key(self) -> str:
        return f"{self.name}.weight"

    @property
    def bias_key(self) -> str:
        return f"{self.name}.bias"

    def init(self, rng: np.random.Generator) -> Params:
        bound = self.init_scale if self.init_scale is not None else 1.0 / np.sqrt(self.in_dim)
        params = {self.weight_key: rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim))}
        if self.bias:
            params[self.bias_key] = np.zeros(self.out_dim)
        return params

    def __call__(self, p: Mapping[str, Node], x: Node) -> Node:
        out = T.matmul(x, p[self.weight_key])
        if self.bias:
            out = out + p[self.bias_key]
        return out


class GRUCell:
    """
    Gated recurrent unit with separate weights per gate.

        r = sigmoid(x W_xr + b_xr + h W_hr + b_hr)
        z = sigmoid(x W_xz + b_xz + h W_hz + b_hz)
        n = tanh(x W_xn + b_xn + r * (h W_hn + b_hn))
        h' = n + z * (h - n)
    """

    GATES = ("r", "z", "n")

    def __init__(self, name: str, in_dim: int, hidden: int):
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        self.x2h = {g: Linear(f"{name}.x{g}", in_dim, hidden, init_scale=bound) for g in self.GATES}
        self.h2h = {g: Linear(f"{name}.h{g}", hidden, hidden, init_scale=bound) for g in self.GATES}

    def init(self, rng: np.random.Generator) -> Params:
        params = {}
        for g in self.GATES:
            params.update(self.x2h[g].init(rng))
            params.update(self.h2h[g].init(rng))
        return params

    def __call__(self, p: Mapping[str, Node], x: Node, h: Node) -> Node:
        r = T.sigmoid(self.x2h["r"](p, x) + self.h2h["r"](p, h))
        z = T.sigmoid(self.x2h["z"](p, x) + self.h2h["z"](p, h))
        n = T.tanh(self.x2h["n"](p, x) + r * self.h2h["n"](p, h))
        return n + z * (h - n)

    def scan(self, p: Mapping[str, Node], xs: Node) -> Node:
        """Run over a (B, F, in_dim) sequence from a zero state; returns the final (B, hidden) state."""
        batch, frames = xs.shape[0], xs.shape[1]
        h = T.constant(np.zeros((batch, self.hidden)))
        for t in range(frames):
            h = self(p, xs[:, t], h)
        return h


class SelfAttention:
    """Single-head scaled dot-product self-attention with a residual connection."""

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = dim
        self.query = Linear(f"{name}.query", dim, dim)
        self.key = Linear(f"{name}.key", dim, dim)
        self.value = Linear(f"{name}.value", dim, dim)
        self.out = Linear(f"{name}.out", dim, dim)

    def init(self, rng: np.random.Generator) -> Params:
        params = {}
        for layer in (self.query, self.key, self.value, self.out):
            params.update(layer.init(rng))
        return params

    def weights(self, p: Mapping[str, Node], x: Node) -> Node:
        """(B, F, F) attention weights; rows sum to one."""
        q = self.query(p, x)
        k = self.key(p, x)
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.dim))
        return T.softmax(scores, axis=-1)

    def __call__(self, p: Mapping[str, Node], x: Node) -> Node:
        attended = T.matmul(self.weights(p, x), self.value(p, x))
        return x + self.out(p, attended)


def as_nodes(params: Mapping[str, np.ndarray], trainable: bool = False) -> Dict[str, Node]:
    """Wrap a parameter dict as leaves (trainable parameters or constants)."""
    make = T.parameter if trainable else T.constant
    return {k: make(v, k) for k, v in params.items()}
