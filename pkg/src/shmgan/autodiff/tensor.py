"""Tensor type and the reverse-mode graph machinery.

Every differentiable op records a :class:`Node` holding its parents and a
backward rule.  Backward rules are written in terms of Tensor ops, so when
``create_graph=True`` the returned gradients are themselves recorded and can
be differentiated again (needed for the gradient penalty).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_grad_enabled = True
_debug_checks = False


class AutodiffError(RuntimeError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def set_debug_checks(enabled: bool) -> None:
    """Raise :class:`NonFiniteError` whenever an op produces NaN/Inf."""
    global _debug_checks
    _debug_checks = bool(enabled)


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    global _debug_checks
    prev = _debug_checks
    _debug_checks = enabled
    try:
        yield
    finally:
        _debug_checks = prev


class Node:
    """One recorded operation: parents plus a backward rule.

    ``backward(grad_out, needs)`` returns one gradient (Tensor or None) per
    parent; ``needs`` flags which parents' gradients are wanted.
    """

    __slots__ = ("parents", "backward", "name")

    def __init__(self, parents: Sequence["Tensor"], backward: Callable, name: str):
        self.parents = tuple(parents)
        self.backward = backward
        self.name = name


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if _debug_checks and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    # -- basic properties -------------------------------------------------
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
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def to_csv(self, path) -> None:
        """Dump as CSV: header row is the shape, second row the flattened values."""
        with open(path, "w") as fh:
            fh.write(",".join(str(s) for s in self.shape) + "\n")
            fh.write(",".join(repr(float(v)) for v in self.data.ravel()) + "\n")

    # -- operators (implemented in ops) ----------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        if exponent == 2:
            return ops.mul(self, self)
        return ops.power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, name: str) -> Tensor:
    """Wrap an op's output, recording a node if any parent needs gradients."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(parents, backward, name)
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in reversed(t.node.parents):
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def grad(output: Tensor, inputs: Iterable[Tensor] | None = None,
         create_graph: bool = False) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``output`` w.r.t. ``inputs``.

    With ``inputs=None`` every requires-grad leaf reachable from ``output`` is
    returned.  Inputs the output does not depend on get a zero gradient.
    """
    if output.size != 1:
        raise AutodiffError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad or output.node is None:
        raise AutodiffError("output is not attached to a recorded graph")

    order = _topological_order(output)
    if inputs is None:
        targets = [t for t in order if t.node is None]
    else:
        targets = list(inputs)
    wanted = {id(t) for t in targets}

    # only tensors with a path to a target need gradients
    relevant: set[int] = set()
    for t in order:
        if id(t) in wanted or (t.node is not None and
                               any(id(p) in relevant for p in t.node.parents)):
            relevant.add(id(t))

    grads: dict[int, Tensor] = {id(output): Tensor(np.ones_like(output.data))}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx:
        for t in reversed(order):
            g = grads.get(id(t))
            if g is None or t.node is None:
                continue
            if id(t) not in wanted:
                # interior gradients are no longer needed once propagated
                del grads[id(t)]
            needs = tuple(p.requires_grad and id(p) in relevant for p in t.node.parents)
            if not any(needs):
                continue
            parent_grads = t.node.backward(g, needs)
            for p, pg, need in zip(t.node.parents, parent_grads, needs):
                if pg is None or not need:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg
    result: dict[Tensor, Tensor] = {}
    for t in targets:
        g = grads.get(id(t))
        result[t] = g if g is not None else Tensor(np.zeros_like(t.data))
    return result


def backward(output: Tensor, create_graph: bool = False) -> dict[Tensor, Tensor]:
    """Gradient map for every requires-grad leaf reachable from ``output``."""
    return grad(output, None, create_graph=create_graph)
