"""Tensor value type and the define-by-run tape used for reverse-mode AD.

Operations executed while a :class:`Tape` is active are appended to it when at
least one input requires a gradient.  ``Tape.backward`` replays the recorded
nodes in reverse order exactly once and accumulates gradients additively into
leaf tensors.  Outside a tape, operations are plain numpy evaluation.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError

_state = threading.local()

DTYPES = {"f32": np.float32, "f64": np.float64}


class Tensor:
    """Dense array (rank <= 4) with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, other)
        return ops.mul(self, other)

    __radd__ = __add__
    __rmul__ = __mul__


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of executed operations; single owner, single use."""

    nodes: list[Node] = field(default_factory=list)
    _consumed: bool = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward(); call reset() first")
        self.nodes.append(Node(op, inputs, output, backward))

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf tensor's ``grad``."""
        if loss.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("backward() already ran on this tape; call reset() first")
        self._consumed = True
        produced = {id(n.output) for n in self.nodes}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if id(loss) not in produced and loss.requires_grad:
            leaves[id(loss)] = loss
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = g.astype(leaf.dtype, copy=False)
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def current_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


def result(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op output and record it on the active tape when needed."""
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        tape = current_tape()
        if tape is not None:
            tape.record(op, inputs, out, backward)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))
