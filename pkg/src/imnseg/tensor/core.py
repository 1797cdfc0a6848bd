"""Tensor carrier and the reverse-mode tape."""

from __future__ import annotations

import threading
import weakref
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    """One executed primitive: its inputs, output and vector-Jacobian product."""

    __slots__ = ("op", "inputs", "_output", "vjp")

    def __init__(self, op: str, inputs: Sequence["Tensor"], output: "Tensor", vjp: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        # weak, or every graph is a Tensor <-> Node cycle left to the cyclic GC
        self._output = weakref.ref(output)
        self.vjp = vjp

    @property
    def output(self) -> "Tensor | None":
        return self._output()


class Tensor:
    """N-d real array with an optional gradient.

    ``values`` is a plain numpy array; ``grad`` is filled by
    :meth:`backward` for every tensor with ``requires_grad`` set.
    """

    __slots__ = ("values", "grad", "requires_grad", "node", "__weakref__")

    def __init__(self, values, requires_grad: bool = False, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ValueError(f"tensor rank must be <= 4, got {arr.ndim}")
        self.values = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Run the reverse pass from this tensor.

        A scalar output is seeded with 1; otherwise ``grad`` must be given.
        """
        if grad is None:
            if self.values.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.values)
        Tape.from_output(self).run(self, np.asarray(grad, dtype=self.dtype))


def make_result(op: str, values: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op output, recording a tape node if any input needs gradients."""
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=needs)
    if needs:
        out.node = Node(op, inputs, out, vjp)
    return out


class Tape:
    """Topologically ordered list of the nodes that produced an output."""

    def __init__(self, nodes: list[Node]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            node = t.node
            if node is None:
                continue
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((t, True))
            for inp in node.inputs:
                if inp.node is not None and id(inp.node) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def run(self, out: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(out): seed}
        for node in reversed(self.nodes):
            res = node.output
            g = None if res is None else grads.pop(id(res), None)
            if g is None:
                continue
            if res.node is not node:
                continue
            in_grads = node.vjp(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                else:
                    prev = grads.get(id(inp))
                    grads[id(inp)] = ig if prev is None else prev + ig
        if out.node is None and out.requires_grad:
            out.grad = seed if out.grad is None else out.grad + seed
