"""
Reverse-mode automatic differentiation over float64 numpy arrays.

Values are plain ``np.ndarray`` objects (dtype float64, read-only once wrapped).
Every differentiable quantity in the project - network activations, latent
trajectories, losses - is a ``Node`` built by the functions in this module.
Nodes are created eagerly (define-by-run): each op computes its value
immediately and records its parents plus a closure that maps the incoming
gradient to parent gradients.

Broadcasting is limited to leading batch dimensions: two operands combine only
when their shapes are equal, one is a scalar, or one shape is a suffix of the
other. Anything else must go through ``broadcast_to`` explicitly.
"""

import itertools
import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp
from scipy.special import softmax as _softmax

from src.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Operand = Union["Node", np.ndarray, float, int]

_counter = itertools.count()


def as_tensor(x) -> Tensor:
    """Copy ``x`` into an immutable float64 array."""
    arr = np.array(x, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def value_of(x: Operand) -> np.ndarray:
    """Return the numeric value of a Node or array-like."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _next_name(op: str) -> str:
    return f"{op}#{next(_counter)}"


class Node:
    """
    A value in the computation graph.

    Attributes:
        value: Forward value (read-only float64 array)
        parents: Nodes this value was computed from
        op: Operation label ("param", "input", "matmul", ...)
        name: Unique node name, used in error messages
        requires_grad: Whether any trainable leaf is upstream
    """

    __slots__ = ("value", "parents", "backward_fn", "op", "name", "requires_grad")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(
        self,
        value: np.ndarray,
        parents: Tuple["Node", ...] = (),
        backward_fn: Optional[Callable] = None,
        op: str = "input",
        name: Optional[str] = None,
        requires_grad: bool = False,
    ):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.name = name or _next_name(op)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Node({self.name}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Node":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Node":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Node":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(value, name: Optional[str] = None) -> Node:
    """Trainable leaf."""
    return Node(as_tensor(value), op="param", name=name, requires_grad=True)


def constant(value, name: Optional[str] = None) -> Node:
    """Non-trainable leaf (inputs, targets, frozen weights)."""
    if isinstance(value, Node):
        return value
    return Node(as_tensor(value), op="input", name=name, requires_grad=False)


def _coerce(x: Operand) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _make(op: str, value, parents: Sequence[Node], backward_fn: Callable,
          name: Optional[str] = None, requires_grad: Optional[bool] = None) -> Node:
    name = name or _next_name(op)
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"node '{name}' ({op}) produced a non-finite value")
    if value.flags.writeable:
        value.setflags(write=False)
    if requires_grad is None:
        requires_grad = any(p.requires_grad for p in parents)
    return Node(value, tuple(parents), backward_fn if requires_grad else None,
                op, name, requires_grad)


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], name: str) -> Tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) < len(b) and b[len(b) - len(a):] == a:
        return b
    if len(b) < len(a) and a[len(a) - len(b):] == b:
        return a
    raise ShapeError(
        f"node '{name}': cannot combine shapes {a} and {b} "
        "(only leading batch dimensions broadcast)"
    )


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------

def add(a: Operand, b: Operand) -> Node:
    a, b = _coerce(a), _coerce(b)
    name = _next_name("add")
    _broadcast_shape(a.shape, b.shape, name)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", a.value + b.value, (a, b), backward, name)


def sub(a: Operand, b: Operand) -> Node:
    a, b = _coerce(a), _coerce(b)
    name = _next_name("sub")
    _broadcast_shape(a.shape, b.shape, name)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", a.value - b.value, (a, b), backward, name)


def mul(a: Operand, b: Operand) -> Node:
    a, b = _coerce(a), _coerce(b)
    name = _next_name("mul")
    _broadcast_shape(a.shape, b.shape, name)

    def backward(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", a.value * b.value, (a, b), backward, name)


def div(a: Operand, b: Operand) -> Node:
    a, b = _coerce(a), _coerce(b)
    name = _next_name("div")
    _broadcast_shape(a.shape, b.shape, name)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value

    def backward(g):
        ga = _unbroadcast(g / b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.value / (b.value ** 2), b.shape) if b.requires_grad else None
        return ga, gb

    return _make("div", out, (a, b), backward, name)


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def neg(a: Operand) -> Node:
    a = _coerce(a)
    return _make("neg", -a.value, (a,), lambda g: (-g,))


def power(a: Operand, exponent: float) -> Node:
    a = _coerce(a)
    exponent = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value ** exponent

    def backward(g):
        return (g * exponent * a.value ** (exponent - 1.0),)

    return _make("pow", out, (a,), backward)


def square(a: Operand) -> Node:
    a = _coerce(a)
    return _make("square", a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def exp(a: Operand) -> Node:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a: Operand) -> Node:
    a = _coerce(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _make("log", out, (a,), lambda g: (g / a.value,))


def tanh(a: Operand) -> Node:
    a = _coerce(a)
    out = np.tanh(a.value)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Operand) -> Node:
    a = _coerce(a)
    out = expit(a.value)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def elementwise(a: Operand, fn: Callable[[np.ndarray], np.ndarray],
                derivative: Callable[[np.ndarray], np.ndarray], op: str = "map") -> Node:
    """Apply an arbitrary smooth elementwise map with a known derivative."""
    a = _coerce(a)
    return _make(op, fn(a.value), (a,), lambda g: (g * derivative(a.value),))


def stop_gradient(a: Operand) -> Node:
    """Forward the value unchanged; no gradient flows to ``a``."""
    a = _coerce(a)
    return _make("stop_gradient", a.value, (a,), None, requires_grad=False)


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

def matmul(a: Operand, b: Operand) -> Node:
    """Batched matrix product ``(..., m, k) @ (..., k, n)``."""
    a, b = _coerce(a), _coerce(b)
    name = _next_name("matmul")
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"node '{name}': matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"node '{name}': inner dimensions differ, {a.shape} @ {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], name)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make("matmul", a.value @ b.value, (a, b), backward, name)


def reduce_sum(a: Operand, axis=None, keepdims: bool = False) -> Node:
    a = _coerce(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make("sum", out, (a,), backward)


def reduce_mean(a: Operand, axis=None, keepdims: bool = False) -> Node:
    a = _coerce(a)
    count = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def l2norm(a: Operand, axis: int = -1) -> Node:
    """Euclidean norm along ``axis``; the subgradient at the origin is zero."""
    a = _coerce(a)
    out = np.sqrt((a.value * a.value).sum(axis=axis))

    def backward(g):
        n = np.expand_dims(out, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(n > 0, a.value / np.where(n > 0, n, 1.0), 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return _make("l2norm", out, (a,), backward)


def softmax(a: Operand, axis: int = -1) -> Node:
    a = _coerce(a)
    out = _softmax(a.value, axis=axis)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), backward)


def log_softmax(a: Operand, axis: int = -1) -> Node:
    a = _coerce(a)
    out = a.value - logsumexp(a.value, axis=axis, keepdims=True)

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation and indexing
# ---------------------------------------------------------------------------

def reshape(a: Operand, shape: Sequence[int]) -> Node:
    a = _coerce(a)
    name = _next_name("reshape")
    try:
        out = a.value.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"node '{name}': cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _make("reshape", out, (a,), lambda g: (g.reshape(a.shape),), name)


def transpose(a: Operand, axes: Sequence[int]) -> Node:
    a = _coerce(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", np.transpose(a.value, axes), (a,),
                 lambda g: (np.transpose(g, inverse),))


def swapaxes(a: Operand, axis1: int = -1, axis2: int = -2) -> Node:
    a = _coerce(a)
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, axes)


def broadcast_to(a: Operand, shape: Sequence[int]) -> Node:
    """Explicit numpy-style broadcast (size-1 axes and new leading axes)."""
    a = _coerce(a)
    shape = tuple(shape)
    name = _next_name("broadcast_to")
    try:
        out = np.broadcast_to(a.value, shape)
    except ValueError as exc:
        raise ShapeError(f"node '{name}': cannot broadcast {a.shape} to {shape}") from exc

    def backward(g):
        lead = len(shape) - a.ndim
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(a.shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make("broadcast_to", out, (a,), backward, name)


def concatenate(nodes: Sequence[Operand], axis: int = -1) -> Node:
    nodes = [_coerce(n) for n in nodes]
    name = _next_name("concatenate")
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"node '{name}': cannot concatenate shapes {[n.shape for n in nodes]}") from exc
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make("concatenate", out, nodes, backward, name)


def stack(nodes: Sequence[Operand], axis: int = 0) -> Node:
    nodes = [_coerce(n) for n in nodes]
    name = _next_name("stack")
    try:
        out = np.stack([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"node '{name}': cannot stack shapes {[n.shape for n in nodes]}") from exc

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _make("stack", out, nodes, backward, name)


def getitem(a: Operand, key) -> Node:
    a = _coerce(a)
    out = a.value[key]

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, key, g)
        return (grad,)

    return _make("getitem", out, (a,), backward)


def take(a: Operand, indices, axis: int = 0) -> Node:
    """Gather entries of ``a`` along ``axis`` (rows of a codebook, ...)."""
    a = _coerce(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    out = np.take(a.value, indices, axis=axis)

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, (slice(None),) * axis + (indices,), g)
        return (grad,)

    return _make("take", out, (a,), backward)


def pick(a: Operand, indices) -> Node:
    """Per-row selection: ``out[b] = a[b, indices[b]]`` for ``a`` of shape (B, N, ...)."""
    a = _coerce(a)
    indices = np.asarray(indices, dtype=np.int64)
    name = _next_name("pick")
    if a.ndim < 2 or indices.shape != (a.shape[0],):
        raise ShapeError(f"node '{name}': pick needs (B, N, ...) and (B,) indices, got {a.shape} and {indices.shape}")
    rows = np.arange(a.shape[0])
    out = a.value[rows, indices]

    def backward(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, (rows, indices), g)
        return (grad,)

    return _make("pick", out, (a,), backward, name)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    seen = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Node, wrt: Sequence[Node]) -> List[np.ndarray]:
    """
    Gradients of a scalar ``loss`` with respect to ``wrt``.

    Nodes that the loss does not depend on (or that sit behind a
    ``stop_gradient``) receive exact zeros.
    """
    if loss.value.size != 1:
        raise ShapeError(f"node '{loss.name}': gradient needs a scalar loss, got shape {loss.shape}")
    wanted = {id(n) for n in wrt}
    grads = {id(loss): np.ones_like(loss.value)}
    kept = {}
    if loss.requires_grad:
        for node in reversed(_topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in wanted:
                kept[id(node)] = g
            if node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    else:
        kept = {k: v for k, v in grads.items() if k in wanted}
    out = []
    for n in wrt:
        g = kept.get(id(n))
        out.append(np.zeros(n.shape) if g is None else np.array(np.broadcast_to(g, n.shape)))
    return out
