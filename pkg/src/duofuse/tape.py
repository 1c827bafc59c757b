"""Minimal reverse-mode differentiation tape over numpy arrays.

Every differentiable operator in this package comes in two forms: a plain
array function plus an explicit ``*_backward`` companion, and a tape-aware
form that records a node so whole networks can be differentiated end to end.
The tape is deliberately tiny: values are numpy arrays, nodes are immutable
once created, and gradient accumulation follows the (deterministic) graph
construction order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Node:
    """A value in the differentiation graph.

    ``vjp`` maps the upstream gradient to a sequence of gradients aligned
    with ``parents``; entries for non-Node parents are ignored.
    """

    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents: tuple = (), vjp: Callable | None = None):
        self.value = np.asarray(value)
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):  # pragma: no cover
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype})"


def value_of(x):
    """Unwrap a Node to its array; pass plain arrays/scalars through."""
    return x.value if isinstance(x, Node) else x


def lift(value, inputs: Sequence, vjp: Callable):
    """Return a Node tracking `inputs` if any of them is a Node, else `value`."""
    if any(isinstance(i, Node) for i in inputs):
        return Node(value, tuple(inputs), vjp)
    return value


def _toposort(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if isinstance(p, Node) and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of `root` into the `.grad` slot of every ancestor.

    `seed` defaults to ones, i.e. the gradient of `root.sum()`.
    """
    if not isinstance(root, Node):
        raise TypeError("backward() needs a Node root")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if not isinstance(parent, Node) or g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def grad_of(node: Node) -> np.ndarray:
    if node.grad is None:
        raise ValueError("node has no accumulated gradient; run backward() first")
    return node.grad
