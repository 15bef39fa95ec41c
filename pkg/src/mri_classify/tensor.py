"""Dense float32 tensors with tape-based reverse-mode differentiation.

A :class:`Tensor` is a row-major float32 array plus a ``requires_grad`` flag
and an optional gradient buffer. Operations executed while a
:class:`GradTape` is active append nodes to the tape; :func:`backward`
replays the tape once, in reverse, and accumulates gradients via the chain
rule. One tape per training step; tapes are never shared between threads.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import GraphError, ShapeError

_tensor_ids = itertools.count(1)
_tls = threading.local()


def _active_tape() -> "GradTape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """Dense n-dimensional float32 value grid, row-major."""

    __slots__ = ("data", "requires_grad", "grad", "tid")

    def __init__(self, shape: Sequence[int], fill=0.0, requires_grad: bool = False):
        shape = tuple(int(d) for d in shape)
        if not shape or any(d < 1 for d in shape):
            raise ShapeError(f"invalid shape {shape}: dimensions must be >= 1")
        n = int(np.prod(shape))
        if np.isscalar(fill):
            data = np.full(shape, fill, dtype=np.float32)
        else:
            arr = np.asarray(fill, dtype=np.float32)
            if arr.size != n:
                raise ShapeError(
                    f"fill of length {arr.size} does not match shape {shape} "
                    f"(expects {n} values)"
                )
            data = arr.reshape(shape).copy()
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tid: int = next(_tensor_ids)

    @classmethod
    def from_array(cls, arr, requires_grad: bool = False) -> "Tensor":
        """Wrap an array-like, inferring the shape."""
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr, requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def copy(self) -> "Tensor":
        return Tensor(self.shape, self.data, requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __getitem__(self, idx):
        return self.data[idx]

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"


class GradTape:
    """Ordered record of operations for one backward sweep.

    Used as a context manager: ops executed inside the ``with`` block are
    recorded whenever one of their inputs requires gradients. Nodes are
    appended in execution order, which is already topological.
    """

    def __init__(self):
        self.nodes: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "GradTape":
        if _active_tape() is not None:
            raise GraphError("a GradTape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tls.tape = None

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward_fn: Callable) -> None:
        """Append a node. ``backward_fn(grad_out)`` must return one gradient
        array (or None) per input, in order."""
        output.requires_grad = True
        self.nodes.append((inputs, output, backward_fn))
        self._output_ids.add(output.tid)

    def produced(self, t: Tensor) -> bool:
        return t.tid in self._output_ids


def record_op(inputs: tuple[Tensor, ...], output: Tensor, backward_fn: Callable) -> Tensor:
    """Record ``output = op(inputs)`` on the active tape, if any input needs grad."""
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(inputs, output, backward_fn)
    return output


def backward(loss: Tensor, tape: GradTape) -> dict[int, np.ndarray]:
    """Reverse sweep: gradients of ``loss`` w.r.t. every tensor on the tape.

    Returns a map from tensor id to gradient array, and accumulates into
    ``t.grad`` for every tensor with ``requires_grad`` seen on the tape
    (zeros if the tensor did not influence the loss). Each node is visited
    exactly once, so repeated calls are deterministic.
    """
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise ArithmeticError("loss is not finite")
    if not tape.produced(loss):
        raise GraphError("loss was not produced through this tape")

    grads: dict[int, np.ndarray] = {loss.tid: np.ones_like(loss.data)}
    for inputs, output, backward_fn in reversed(tape.nodes):
        gout = grads.get(output.tid)
        if gout is None:
            continue
        gins = backward_fn(gout)
        for t, g in zip(inputs, gins):
            if g is None or not t.requires_grad:
                continue
            if t.tid in grads:
                grads[t.tid] = grads[t.tid] + g
            else:
                grads[t.tid] = g

    # Leaves (parameters and other non-produced inputs) get .grad populated;
    # unused ones get zeros so every requires_grad leaf reports a gradient.
    seen: set[int] = set()
    for inputs, _, _ in tape.nodes:
        for t in inputs:
            if not t.requires_grad or tape.produced(t) or t.tid in seen:
                continue
            seen.add(t.tid)
            g = grads.setdefault(t.tid, np.zeros_like(t.data))
            if t.grad is None:
                t.grad = g.astype(np.float32, copy=True)
            else:
                t.grad += g
    return grads


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product ``out[i,j] = sum_t a[i,t] * b[t,j]``."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = Tensor.from_array(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return record_op((a, b), out, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (no broadcasting)."""
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor.from_array(a.data + b.data)

    def bwd(g):
        return g, g

    return record_op((a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = Tensor.from_array(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return record_op((a, b), out, bwd)


def reduce_sum(t: Tensor) -> Tensor:
    """Sum of all elements, as a shape-[1] tensor."""
    out = Tensor.from_array(np.asarray([t.data.sum()], dtype=np.float32))

    def bwd(g):
        return (np.full_like(t.data, g.reshape(-1)[0]),)

    return record_op((t,), out, bwd)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    """Row-major reshape; flattening then reshaping is the identity."""
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    out = Tensor.from_array(t.data.reshape(shape))

    def bwd(g):
        return (g.reshape(t.shape),)

    return record_op((t,), out, bwd)


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient estimate of scalar ``f`` at ``x``.

    Perturbs one element at a time and divides by the step that was actually
    applied after float32 rounding, which removes the step-representation
    error from the estimate.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    base = x.data.astype(np.float64).reshape(-1)
    grad = np.zeros(base.size, dtype=np.float64)
    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus[i] += h
        minus[i] -= h
        xp = Tensor(x.shape, plus.astype(np.float32))
        xm = Tensor(x.shape, minus.astype(np.float32))
        applied = float(xp.data.reshape(-1)[i]) - float(xm.data.reshape(-1)[i])
        grad[i] = (float(f(xp)) - float(f(xm))) / applied
    return grad.reshape(x.shape)
