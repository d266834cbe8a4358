"""Tensor-core: reverse-mode autodiff, optimiser and checkpoints."""

from src.autodiff.graph import ComputeGraph, Leaf, check_gradients, evaluate, gradient
from src.autodiff.optim import AdamState, adam_step, clip_grad_norm, learning_rate
from src.autodiff.tensor import Node, backward, constant, parameter

__all__ = [
    "AdamState",
    "ComputeGraph",
    "Leaf",
    "Node",
    "adam_step",
    "backward",
    "check_gradients",
    "clip_grad_norm",
    "constant",
    "evaluate",
    "gradient",
    "learning_rate",
    "parameter",
]
