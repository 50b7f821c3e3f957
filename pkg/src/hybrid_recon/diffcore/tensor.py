"""Tensors and the computation tape for reverse-mode differentiation.

Recording is opt-in: operations are only taped while a :class:`Tape` is
active (``with Tape() as tape:``).  Outside a tape every primitive simply
computes its value, which is what inference code wants.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense real array with an optional slot on the active tape.

    Parameters
    ----------
    data : array_like
        Real values.  Stored as a C-contiguous float64 array.
    requires_grad : bool
        Whether gradients should be accumulated for this tensor.
    name : str, optional
        Used in diagnostics (e.g. NaN gradient errors from the optimizer).
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if np.iscomplexobj(data):
            raise TypeError("Tensor holds real values; pack complex arrays first")
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.node_id: int | None = None
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

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
            raise ShapeError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self) -> dict:
        if self._tape is None:
            raise RuntimeError("tensor was not produced on a tape")
        return backward(self._tape, self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # arithmetic sugar; implementations live in ops
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

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: int
    backward: Callable


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Node ids are assigned in execution order, so the record list is already
    topologically sorted: every record's inputs were created before it.
    """

    records: list = field(default_factory=list)
    nodes: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def register(self, t: Tensor) -> int:
        if t._tape is not self or t.node_id is None:
            t.node_id = len(self.nodes)
            t._tape = self
            self.nodes.append(t)
        return t.node_id

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor, bwd: Callable) -> None:
        ids = tuple(self.register(t) if t.requires_grad else None for t in inputs)
        self.register(out)
        self.records.append(TapeRecord(op, ids, out.node_id, bwd))

    def gradient(self, loss: Tensor, params):
        """Gradients of ``loss`` for a list of tensors, or a name -> tensor dict.

        The result mirrors the input (list or dict); untouched parameters get zeros.
        """
        grads = backward(self, loss)

        def one(p):
            if p._tape is self and p.node_id is not None and p.node_id in grads:
                return grads[p.node_id]
            return np.zeros_like(p.data)

        if isinstance(params, dict):
            return {k: one(p) for k, p in params.items()}
        return [one(p) for p in params]


def backward(tape: Tape, loss: Tensor) -> dict:
    """Propagate d(loss)/d(node) backwards over ``tape``.

    Returns a mapping ``node_id -> gradient`` covering every node on the tape
    that requires gradients; nodes the loss does not depend on get zeros.
    Leaf tensors also have their ``.grad`` attribute set.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise RuntimeError("loss was not recorded on this tape")
    grads: dict = {loss.node_id: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.get(rec.output)
        if g is None:
            continue
        in_grads = rec.backward(g)
        for nid, ig in zip(rec.inputs, in_grads):
            if nid is None or ig is None:
                continue
            if nid in grads:
                grads[nid] = grads[nid] + ig
            else:
                grads[nid] = ig
    result = {}
    for t in tape.nodes:
        if t.requires_grad:
            g = grads.get(t.node_id)
            result[t.node_id] = np.zeros_like(t.data) if g is None else g.reshape(t.shape)
    produced = {rec.output for rec in tape.records}
    for t in tape.nodes:
        if t.requires_grad and t.node_id not in produced:
            t.grad = result[t.node_id]
    return result


def forward(graph: Callable, *inputs: Tensor) -> tuple:
    """Run ``graph(*inputs)`` on a fresh tape and return ``(output, tape)``."""
    with Tape() as tape:
        out = graph(*inputs)
    return out, tape


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
