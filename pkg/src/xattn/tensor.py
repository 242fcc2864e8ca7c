"""Dense float64 tensors and a single define-by-run gradient tape.

A :class:`Tensor` is a thin wrapper over a row-major ``numpy`` array. Gradients
are only tracked for tensors explicitly registered with :meth:`Tape.watch` on
the currently active tape; everything else behaves as a constant.

    with Tape() as tape:
        tape.watch(w)
        loss = ops.sum(ops.matmul(w, x))
    grads = tape.backward(loss)
    dw = tape.grad(w)
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a precondition of an operation is violated."""


class Tensor:
    __slots__ = ("data", "grad_id", "_tape")

    def __init__(self, data):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    # construction helpers
    @classmethod
    def zeros(cls, *shape: int) -> "Tensor":
        return cls(np.zeros(shape))

    @classmethod
    def ones(cls, *shape: int) -> "Tensor":
        return cls(np.ones(shape))

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, never tracked."""
        return Tensor(self.data.copy())

    def tracked(self, tape: Optional["Tape"] = None) -> bool:
        tape = tape if tape is not None else active_tape()
        return tape is not None and self._tape is tape

    def __repr__(self) -> str:
        flag = f", grad_id={self.grad_id}" if self._tape is not None else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; the implementations live in ops
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


VJP = Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple  # handles, None for untracked operands
    out: int
    vjp: VJP


_local = threading.local()


def active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Append-only record of primitive ops over registered leaves.

    One tape is single-writer; separate tapes may live on separate threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.gradients: dict[int, Tensor] = {}
        self._leaves: dict[int, Tensor] = {}
        self._next = 0

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def _handle(self) -> int:
        h = self._next
        self._next += 1
        return h

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            if t._tape is self and t.grad_id in self._leaves:
                continue
            t._tape = self
            t.grad_id = self._handle()
            self._leaves[t.grad_id] = t

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def record(self, op: str, out: Tensor, inputs: Sequence, vjp: VJP) -> Tensor:
        handles = tuple(t.grad_id if isinstance(t, Tensor) and t._tape is self else None
                        for t in inputs)
        if any(h is not None for h in handles):
            out._tape = self
            out.grad_id = self._handle()
            self.nodes.append(Node(op, handles, out.grad_id, vjp))
        return out

    def backward(self, loss: Tensor) -> dict[int, Tensor]:
        """Reverse sweep from a scalar loss; fills :attr:`gradients` for every leaf."""
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {}
        if loss._tape is self:
            pending[loss.grad_id] = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = pending.pop(node.out, None)
            if g is None:
                continue
            needs = [h is not None for h in node.inputs]
            parts = node.vjp(g, needs)
            for h, p in zip(node.inputs, parts):
                if h is None or p is None:
                    continue
                if h in pending:
                    pending[h] = pending[h] + p
                else:
                    pending[h] = p
        self.gradients = {
            h: Tensor(pending[h]) if h in pending else Tensor(np.zeros_like(t.data))
            for h, t in self._leaves.items()
        }
        return self.gradients

    def grad(self, t: Tensor) -> Tensor:
        if t._tape is not self or t.grad_id not in self.gradients:
            raise ContractError("tensor is not a leaf with a computed gradient on this tape")
        return self.gradients[t.grad_id]


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    return tape.backward(loss)


def record(op: str, out_data: np.ndarray, inputs: Sequence, vjp: VJP) -> Tensor:
    """Wrap ``out_data`` and record it on the active tape if any input is tracked.

    ``vjp(g, needs)`` receives the output cotangent and a per-input mask, and
    returns one array (or ``None``) per input.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        tape.record(op, out, inputs, vjp)
    return out
