"""Recording tape for reverse-mode differentiation.

A Tape records nodes in forward order; backward() walks them once in reverse,
so gradients are exact reverse accumulation over the recorded graph.  Plain
numpy arrays passed into ops are treated as constants (no gradient).  All
values are float64.
"""

from __future__ import annotations

import numpy as np

from ..errors import TapeReusedError


class Node:
    """One recorded value.  ``grad`` is allocated lazily on first use."""

    __slots__ = ("value", "grad", "_backward")

    def __init__(self, value, backward_fn=None):
        self.value = value
        self.grad = None
        self._backward = backward_fn

    def add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g


class Tape:
    """Ordered record of one forward pass; consumed by a single backward."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def add(self, value, backward_fn=None) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), backward_fn)
        self.nodes.append(node)
        return node


def val(x):
    """Underlying array of a Node, or the array itself for constants."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def backward(tape: Tape, outputs, output_grads=None) -> None:
    """Reverse-accumulate gradients from ``outputs`` through the tape.

    ``outputs`` may be a single Node (seeded with gradient 1, or with
    ``output_grads``) or a list of Nodes paired with a list of gradients.
    Each recorded node's backward rule runs exactly once, in reverse order.
    """
    if tape.consumed:
        raise TapeReusedError("tape already consumed by a previous backward()")
    tape.consumed = True
    if isinstance(outputs, Node):
        outputs = [outputs]
        output_grads = [output_grads] if output_grads is not None else None
    if output_grads is None:
        output_grads = [np.ones_like(o.value) for o in outputs]
    for node, g in zip(outputs, output_grads):
        node.add_grad(np.asarray(g, dtype=np.float64))
    for node in reversed(tape.nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
