"""Reverse-mode automatic differentiation over a recorded op graph.

Every op in `ops` returns a DiffValue whose node remembers its parent
DiffValues and a closure computing the parents' gradient contributions
from the node's own gradient. `backward(loss)` walks the record once in
reverse topological order and adds d(loss)/d(v) into every reachable
v.grad; calling it again without zeroing accumulates another pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError


class DiffValue:
    """A tensor enrolled in the computation record: value plus gradient.

    `value` is a numpy array (float32 normally; float64 in the optional
    high-precision mode used to tighten gradient checks). `grad` always
    reads as an array of the same shape, starting at zeros.
    """

    __slots__ = ("value", "_grad", "_parents", "_grad_fn", "name")

    def __init__(self, value, parents=(), grad_fn=None, name=None):
        self.value = np.asarray(value)
        self._grad = None
        self._parents = tuple(parents)
        self._grad_fn = grad_fn
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, arr) -> None:
        self._grad = np.asarray(arr)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "DiffValue":
        """A leaf view of the same value, cut off from the record."""
        return DiffValue(self.value, name=self.name)

    def accumulate(self, g) -> None:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        self._grad += g

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"DiffValue{tag}(shape={self.value.shape}, dtype={self.value.dtype})"


def leaf(value, name=None) -> DiffValue:
    """Enroll a raw array as a differentiable leaf (parameter / input)."""
    return DiffValue(value, name=name)


def _topo_order(root: DiffValue) -> list[DiffValue]:
    # Iterative DFS: recorded graphs of deep networks exceed the
    # recursion limit comfort zone.
    order: list[DiffValue] = []
    seen: set[int] = set()
    stack: list[tuple[DiffValue, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: DiffValue) -> None:
    """Accumulate d(loss)/d(v) into v.grad for every v in loss's record.

    `loss` must be scalar (one element). Gradients are propagated through
    fresh per-node buffers and then added into .grad, so repeated calls
    add repeated passes instead of compounding.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    msg: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = msg.pop(id(node), None)
        if g is None:
            continue
        node.accumulate(g)
        if node._grad_fn is None:
            continue
        for parent, contribution in node._grad_fn(g):
            key = id(parent)
            if key in msg:
                msg[key] += contribution
            elif np.may_share_memory(contribution, g):
                # Passthrough ops hand out g (or a view of it); the buffer
                # must be owned before later contributions add into it.
                msg[key] = np.array(contribution, copy=True)
            else:
                msg[key] = contribution
