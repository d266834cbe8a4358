"""
Named computation graphs on top of the Node op set.

A ComputeGraph pairs a builder function with its declared leaves. Binding
concrete tensors to the leaves and calling the builder yields the named
output nodes; ``evaluate`` returns their values and ``gradient`` the
derivatives of a scalar output with respect to every trainable leaf.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import Node, as_tensor, backward, constant, parameter
from src.errors import ShapeError, UnboundLeafError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Leaf:
    """A graph input: trainable parameter or fixed input tensor."""

    name: str
    shape: Optional[Tuple[int, ...]] = None
    trainable: bool = True


class ComputeGraph:
    """
    Builder function plus declared leaves.

    ``build`` receives a dict of leaf name -> Node and returns a mapping of
    output name -> Node.
    """

    def __init__(self, build: Callable[[Dict[str, Node]], Mapping[str, Node]],
                 leaves: Iterable[Leaf], name: str = "graph"):
        self.build = build
        self.leaves = {leaf.name: leaf for leaf in leaves}
        self.name = name

    @property
    def parameters(self) -> Tuple[str, ...]:
        return tuple(n for n, leaf in self.leaves.items() if leaf.trainable)

    def bind(self, bindings: Mapping[str, np.ndarray]) -> Dict[str, Node]:
        nodes = {}
        for name, leaf in self.leaves.items():
            if name not in bindings:
                raise UnboundLeafError(f"graph '{self.name}': leaf '{name}' is not bound")
            value = as_tensor(bindings[name])
            if leaf.shape is not None and value.shape != tuple(leaf.shape):
                raise ShapeError(
                    f"graph '{self.name}': leaf '{name}' expects shape {tuple(leaf.shape)}, got {value.shape}"
                )
            nodes[name] = parameter(value, name) if leaf.trainable else constant(value, name)
        return nodes

    def run(self, bindings: Mapping[str, np.ndarray]) -> Tuple[Dict[str, Node], Dict[str, Node]]:
        leaves = self.bind(bindings)
        outputs = dict(self.build(leaves))
        return leaves, outputs


def evaluate(graph: ComputeGraph, bindings: Mapping[str, np.ndarray],
             outputs: Optional[Sequence[str]] = None) -> Dict[str, np.ndarray]:
    """
    Forward values of the requested graph outputs (all outputs by default).

    Raises:
        UnboundLeafError: a declared leaf has no binding
        ShapeError: a binding or an intermediate op has inconsistent shapes
    """
    _, nodes = graph.run(bindings)
    names = list(nodes) if outputs is None else list(outputs)
    missing = [n for n in names if n not in nodes]
    if missing:
        raise KeyError(f"graph '{graph.name}' has no output named {missing[0]!r}")
    return {n: nodes[n].value for n in names}


def gradient(graph: ComputeGraph, loss: str, bindings: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Gradient of the scalar output ``loss`` with respect to every trainable leaf."""
    leaves, nodes = graph.run(bindings)
    if loss not in nodes:
        raise KeyError(f"graph '{graph.name}' has no output named {loss!r}")
    params = [leaves[n] for n in graph.parameters]
    grads = backward(nodes[loss], params)
    return dict(zip(graph.parameters, grads))


def numerical_gradient(graph: ComputeGraph, loss: str, bindings: Mapping[str, np.ndarray],
                       eps: float = 1e-5) -> Dict[str, np.ndarray]:
    """Central finite differences of ``loss`` for every trainable leaf."""
    base = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    result = {}
    for name in graph.parameters:
        value = base[name]
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            original = value[idx]
            value[idx] = original + eps
            plus = float(evaluate(graph, base, [loss])[loss])
            value[idx] = original - eps
            minus = float(evaluate(graph, base, [loss])[loss])
            value[idx] = original
            grad[idx] = (plus - minus) / (2.0 * eps)
        result[name] = grad
    return result


def check_gradients(graph: ComputeGraph, loss: str, bindings: Mapping[str, np.ndarray],
                    eps: float = 1e-5) -> Dict[str, float]:
    """
    Compare reverse-mode gradients with central differences.

    Returns:
        Relative error ||g - g_fd|| / max(||g||, ||g_fd||, 1e-12) per parameter leaf
    """
    analytic = gradient(graph, loss, bindings)
    numeric = numerical_gradient(graph, loss, bindings, eps)
    errors = {}
    for name in graph.parameters:
        a, n = analytic[name], numeric[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
        errors[name] = float(np.linalg.norm(a - n) / scale)
    worst = max(errors.items(), key=lambda kv: kv[1]) if errors else None
    if worst is not None:
        logger.debug(f"gradient check '{graph.name}': worst leaf {worst[0]} rel_err={worst[1]:.2e}")
    return errors
