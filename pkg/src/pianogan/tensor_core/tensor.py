"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every gradient rule is written in terms of :class:`Tensor` operations, so a
backward pass run with ``create_graph=True`` is itself differentiable. That is
what the gradient penalty needs: the norm of an input gradient, differentiated
again with respect to critic parameters.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError, NonFiniteError, NotDifferentiableError

_grad_enabled = True
# when a list, relu-type ops append their activation masks to it
_kink_masks: list | None = None

# Ops whose backward rule is not the derivative of their forward map.
NON_DIFFERENTIABLE_OPS = frozenset({"unit_step"})
ESTIMATOR_OPS = frozenset({"binary_neuron"})


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def set_grad_enabled(mode: bool):
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = bool(mode)
    try:
        yield
    finally:
        _grad_enabled = previous


def no_grad():
    return set_grad_enabled(False)


@contextlib.contextmanager
def record_kinks():
    """Collect the on/off mask of every relu-type op evaluated inside the block."""
    global _kink_masks
    previous = _kink_masks
    _kink_masks = []
    try:
        yield _kink_masks
    finally:
        _kink_masks = previous


class Tensor:
    """Dense float64 array that records the operations applied to it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self.op = "leaf"
        self.name = name

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def check_finite(self, what: str = "tensor") -> Tensor:
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {what} (op={self.op})")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NonFiniteError(f"non-finite gradient in {what} (op={self.op})")
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, gradient=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        seed = _as_tensor(np.ones_like(self.data) if gradient is None else gradient)
        grads = _backprop([self], [seed], create_graph=False, targets=None)
        for node, g in grads.values():
            if node.is_leaf and node.requires_grad:
                node.grad = g.data.copy() if node.grad is None else node.grad + g.data

    # -- operators ----------------------------------------------------------
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

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of an op; records the graph edge when needed.

    ``vjp(g, needs)`` receives the upstream gradient as a Tensor and a tuple of
    booleans saying which parents need a gradient; it returns one Tensor (or
    None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


# -- graph traversal ---------------------------------------------------------
def topological_order(roots: Iterable[Tensor]) -> list[Tensor]:
    """Nodes reachable from ``roots`` that require grad, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    for root in roots:
        if not root.requires_grad or id(root) in seen:
            continue
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _backprop(roots, seeds, create_graph: bool, targets):
    order = topological_order(roots)
    if targets is None:
        relevant = {id(n) for n in order}
        keep = None
    else:
        target_ids = {id(t) for t in targets}
        relevant = set()
        for node in order:
            if id(node) in target_ids or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))
        keep = target_ids

    grads: dict[int, tuple[Tensor, Tensor]] = {}
    with set_grad_enabled(create_graph):
        for root, seed in zip(roots, seeds):
            if root.requires_grad and id(root) in relevant:
                if seed.shape != root.shape:
                    raise DimensionError(f"seed gradient {seed.shape} vs output {root.shape}")
                _accumulate(grads, root, seed)
        for node in reversed(order):
            entry = grads.get(id(node))
            if entry is None or node._vjp is None:
                continue
            needs = tuple(p.requires_grad and id(p) in relevant for p in node._parents)
            if not any(needs):
                continue
            parent_grads = node._vjp(entry[1], needs)
            for parent, need, g in zip(node._parents, needs, parent_grads):
                if need and g is not None:
                    _accumulate(grads, parent, g)
            if keep is not None and id(node) not in keep:
                del grads[id(node)]
    return grads


def _accumulate(grads, node, g):
    entry = grads.get(id(node))
    grads[id(node)] = (node, g) if entry is None else (node, entry[1] + g)


def grad(outputs, inputs, grad_outputs=None, create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``outputs`` with respect to ``inputs``.

    Inputs that the outputs do not depend on get a zero tensor. With
    ``create_graph`` the returned tensors carry their own graph and can be
    differentiated again.
    """
    outputs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    inputs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    if grad_outputs is None:
        seeds = [Tensor(np.ones_like(o.data)) for o in outputs]
    else:
        grad_outputs = [grad_outputs] if not isinstance(grad_outputs, (list, tuple)) else grad_outputs
        seeds = [_as_tensor(g) for g in grad_outputs]
    grads = _backprop(outputs, seeds, create_graph, targets=inputs)
    result = []
    for t in inputs:
        entry = grads.get(id(t))
        result.append(entry[1] if entry is not None else Tensor(np.zeros_like(t.data)))
    return result


def graph_ops(root: Tensor) -> set[str]:
    return {node.op for node in topological_order([root])}


# -- broadcasting helpers ----------------------------------------------------
def _np_sum_to(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1
    )
    return a.sum(axis=axes, keepdims=True).reshape(shape)


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def vjp(g, needs):
        return (broadcast_to(g, src),)

    return make_node(_np_sum_to(x.data, shape), (x,), vjp, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def vjp(g, needs):
        return (sum_to(g, src),)

    return make_node(np.broadcast_to(x.data, shape), (x,), vjp, "broadcast_to")


# -- elementwise arithmetic --------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(g, b.shape) if needs[1] else None)

    return make_node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(-g, b.shape) if needs[1] else None)

    return make_node(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, needs):
        return (
            sum_to(g * b, a.shape) if needs[0] else None,
            sum_to(g * a, b.shape) if needs[1] else None,
        )

    return make_node(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def vjp(g, needs):
        return (
            sum_to(g / b, a.shape) if needs[0] else None,
            sum_to(-g * a / (b * b), b.shape) if needs[1] else None,
        )

    return make_node(a.data / b.data, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(-a.data, (a,), lambda g, needs: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    p = float(exponent)

    def vjp(g, needs):
        if p == 2.0:
            return (g * a * 2.0,)
        return (g * p * power(a, p - 1.0),)

    return make_node(a.data**p, (a,), vjp, "power")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def vjp(g, needs):
        return (g * out,)

    out = make_node(out_data, (a,), vjp, "exp")
    return out


def log(a) -> Tensor:
    a = _as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g, needs: (g / a,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)

    def vjp(g, needs):
        return (g * 0.5 / out,)

    out = make_node(np.sqrt(a.data), (a,), vjp, "sqrt")
    return out


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)

    def vjp(g, needs):
        return (g * out * (1.0 - out),)

    out = make_node(_np_sigmoid(a.data), (a,), vjp, "sigmoid")
    return out


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = (a.data > 0).astype(np.float64)
    if _kink_masks is not None:
        _kink_masks.append(mask > 0)
    return make_node(a.data * mask, (a,), lambda g, needs: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    if _kink_masks is not None:
        _kink_masks.append(a.data > 0)
    return make_node(a.data * factor, (a,), lambda g, needs: (g * factor,), "leaky_relu")


def unit_step(a) -> Tensor:
    """Heaviside step with u(0) = 1. Has no gradient."""
    a = _as_tensor(a)

    def vjp(g, needs):
        raise NotDifferentiableError("unit_step has no gradient; use a binary neuron estimator")

    return make_node((a.data >= 0).astype(np.float64), (a,), vjp, "unit_step")


# -- linear algebra and reductions ------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {a.shape} and {b.shape}")

    def vjp(g, needs):
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return make_node(a.data @ b.data, (a, b), vjp, "matmul")


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(
        np.transpose(a.data, axes), (a,), lambda g, needs: (transpose(g, inverse),), "transpose"
    )


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {src} to {shape}") from exc
    return make_node(data, (a,), lambda g, needs: (reshape(g, src),), "reshape")


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    src = a.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(src))

    def vjp(g, needs):
        return (broadcast_to(reshape(g, kept), src),)

    return make_node(a.data.sum(axis=axes, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return sum_(a, axes, keepdims) * (1.0 / count)


# -- structural ops ------------------------------------------------------------
def getitem(a, index) -> Tensor:
    """Basic (slice/integer) indexing; advanced indexing is not supported."""
    a = _as_tensor(a)
    src = a.shape

    def vjp(g, needs):
        return (_index_adjoint(g, index, src),)

    return make_node(a.data[index], (a,), vjp, "getitem")


def _index_adjoint(g: Tensor, index, shape) -> Tensor:
    data = np.zeros(shape)
    data[index] = g.data
    return make_node(data, (g,), lambda gg, needs: (getitem(gg, index),), "index_adjoint")


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` is one (before, after) pair per axis."""
    a = _as_tensor(a)
    widths = tuple((int(lo), int(hi)) for lo, hi in widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_node(np.pad(a.data, widths), (a,), lambda g, needs: (getitem(g, index),), "pad")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ndim = tensors[0].ndim
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    axis %= ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError(
                f"concat extents disagree off axis {axis}: {[t.shape for t in tensors]}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    lead = (slice(None),) * axis

    def vjp(g, needs):
        return tuple(
            getitem(g, lead + (slice(int(lo), int(hi)),)) if need else None
            for lo, hi, need in zip(bounds[:-1], bounds[1:], needs)
        )

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp, "concat")


def stack(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim + 1
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for rank {ndim}")
    axis %= ndim
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis)


def split(a, sections, axis: int = -1) -> list[Tensor]:
    """Split into ``sections`` equal pieces (int) or pieces of the given sizes."""
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    axis %= a.ndim
    n = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or n % sections:
            raise DimensionError(f"cannot split extent {n} into {sections} parts")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != n:
            raise DimensionError(f"split sizes {sizes} do not sum to extent {n}")
    lead = (slice(None),) * axis
    pieces, start = [], 0
    for size in sizes:
        pieces.append(getitem(a, lead + (slice(start, start + size),)))
        start += size
    return pieces


def squared_norm(a, axis=None) -> Tensor:
    return sum_(a * a, axis)
