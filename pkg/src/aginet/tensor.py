"""Tensor values and the reverse-mode tape.

A :class:`Tensor` wraps a read-only numpy array. Differentiable primitives in
:mod:`aginet.functional` record themselves on the active :class:`Tape`; calling
:func:`backward` walks the recording in reverse and returns a :class:`GradMap`.

Example
-------
>>> import numpy as np
>>> from aginet import functional as F
>>> x = Tensor(np.arange(3.0))
>>> with Tape() as tape:
...     loss = F.sum(F.mul(x, x))
>>> backward(tape, loss)[x]
array([0., 2., 4.])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_ids = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; names the offending axes."""


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class Tensor:
    """Immutable dense array with a unique id used as the gradient key."""

    __slots__ = ("data", "id", "name")

    def __init__(self, data, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype, copy=True) if dtype is not None else np.array(data, copy=True)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.id = next(_ids)
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal: takes ownership of a freshly computed array without copying
        t = cls.__new__(cls)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        t.data = arr
        t.id = next(_ids)
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __hash__(self) -> int:
        return self.id

    def __eq__(self, other) -> bool:
        return self is other


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    # maps output gradient -> tuple of input gradients (None for "no gradient")
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    label: str


class Tape:
    """Ordered log of primitive applications.

    Use as a context manager; primitives executed inside the ``with`` block are
    recorded. One tape belongs to one thread and one training step.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp, label: str) -> None:
        self.records.append(_Record(out, tuple(inputs), vjp, label))
        self._produced.add(out.id)

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._produced

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def check_finite(arr: np.ndarray, label: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{label}: produced non-finite values")
    return arr


class GradMap:
    """Gradients keyed by tensor; missing entries read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.id)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.id in self._grads

    def get(self, t: Tensor, default=None):
        return self._grads.get(t.id, default)

    def __len__(self) -> int:
        return len(self._grads)

    def items(self):
        for k, g in self._grads.items():
            yield self._tensors[k], g


def backward(tape: Tape, loss: Tensor) -> GradMap:
    """Reverse-mode sweep from a scalar ``loss`` recorded on ``tape``.

    Records are visited in reverse recording order; input gradients are summed
    in that fixed order, so results are bitwise reproducible.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss not in tape:
        raise KeyError("backward: loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {loss.id: loss}
    for rec in reversed(tape.records):
        g = grads.get(rec.out.id)
        if g is None:
            continue
        in_grads = rec.vjp(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{rec.label}: gradient shape {gi.shape} != input shape {t.shape}")
            prev = grads.get(t.id)
            if prev is None:
                grads[t.id] = np.array(gi, dtype=t.dtype, copy=True)
                tensors[t.id] = t
            else:
                prev += gi
    return GradMap(grads, tensors)
