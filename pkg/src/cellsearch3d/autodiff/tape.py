"""Tensors, parameters and the per-pass operation tape.

Operations record themselves on the tape that is active in the current
context (``with Tape() as tape: ...``). Outside any tape they only compute
values, which is what inference uses.
"""

from __future__ import annotations

import contextvars
import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_ACTIVE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)
_PARAM_IDS = itertools.count()

KERNEL = "kernel"
HYBRID = "hybrid"


class TapeError(RuntimeError):
    """Misuse of the tape contract (double backward, non-scalar loss, ...)."""


class Tensor:
    """Dense float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim and min(self.data.shape) < 1:
            raise ValueError(f"tensor extents must be >= 1, got {self.data.shape}")
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf. ``kind`` separates kernel weights from hybrid (architecture) weights."""

    __slots__ = ("kind", "uid")

    def __init__(self, value, kind: str = KERNEL):
        if kind not in (KERNEL, HYBRID):
            raise ValueError(f"unknown parameter kind {kind!r}")
        super().__init__(value, requires_grad=True)
        self.kind = kind
        self.uid = next(_PARAM_IDS)

    @property
    def value(self) -> np.ndarray:
        return self.data


@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of one forward pass.

    Nodes are appended in execution order, so the list is already
    topologically sorted. A tape supports exactly one ``backward``; call
    ``reset`` (or use a fresh tape) before the next pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeError("backward already ran on this tape; reset it before reuse")
        if loss.data.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        if not loss._tracked:
            raise TapeError("loss does not depend on any trainable tensor")
        self._consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp._tracked:
                    continue
                if inp.requires_grad:
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi


def active_tape() -> Tape | None:
    return _ACTIVE.get()


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    """Wrap ``out_data`` and, if any input is tracked on the active tape, log the node."""
    out = Tensor(out_data)
    tape = _ACTIVE.get()
    if tape is not None and any(t._tracked for t in inputs):
        out._tracked = True
        tape.nodes.append(_Node(out, tuple(inputs), backward))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)
