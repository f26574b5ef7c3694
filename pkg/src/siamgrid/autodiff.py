"""Minimal reverse-mode automatic differentiation over float32 numpy arrays.

The engine is define-by-run: every differentiable operation appends a node
to the active :class:`Tape` in creation order, which is a valid topological
order by construction. ``backward`` walks the tape in reverse and applies
each node's backward rule. Tapes are rebuilt per training step; there is
no graph caching.

All values are 32-bit floats. Gradients accumulate additively when a
tensor feeds several downstream ops.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ContractError(ValueError):
    """An operation was called outside its stated contract."""


class DimensionError(ContractError):
    """Operand shapes are incompatible; the message names both shapes."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=DTYPE)
    return np.ascontiguousarray(arr)


class Tensor:
    """A float32 n-d value with an optional gradient.

    ``data`` is the row-major numpy array; its shape is fixed for the
    lifetime of the tensor (``reshape`` returns a new Tensor). ``grad``
    is populated by :func:`backward` for every tensor on the path from a
    loss to the leaves, which makes node-level gradient inspection
    possible in tests.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_param", "name")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad) and not _grad_disabled()
        self.grad: np.ndarray | None = None
        self.is_param = False
        self.name: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis=axis)

    def mean(self, axis=None) -> "Tensor":
        return tmean(self, axis=axis)

    def relu(self) -> "Tensor":
        return relu(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf tensor; its name keys optimizer and checkpoint state."""

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True)
        self.requires_grad = True  # parameters are trainable even under no_grad
        self.is_param = True
        self.name = name


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

class Tape:
    """Ordered record of operation nodes: (output tensor, backward rule).

    Nodes are appended in creation order, so every node's inputs were
    produced earlier or are leaves. ``clear`` drops all nodes; training
    loops clear between steps.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]):
        self.nodes.append((out, backward_fn))

    def clear(self):
        self.nodes.clear()

    def __len__(self):
        return len(self.nodes)


_TAPE = Tape()
_NO_GRAD_DEPTH = 0


def active_tape() -> Tape:
    return _TAPE


def _grad_disabled() -> bool:
    return _NO_GRAD_DEPTH > 0


@contextlib.contextmanager
def no_grad():
    """Disable tape recording; forward values are unchanged."""
    global _NO_GRAD_DEPTH
    _NO_GRAD_DEPTH += 1
    try:
        yield
    finally:
        _NO_GRAD_DEPTH -= 1


@contextlib.contextmanager
def tape_scope():
    """Run with a fresh tape, restoring the previous one afterwards."""
    global _TAPE
    prev = _TAPE
    _TAPE = Tape()
    try:
        yield _TAPE
    finally:
        _TAPE = prev


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn):
    if _grad_disabled():
        out.requires_grad = False
        return out
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE.record(out, backward_fn)
    return out


def _accum(t: Tensor, g: np.ndarray):
    # grads are only ever rebound, never mutated in place, so aliasing the
    # incoming array on first assignment is safe
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=DTYPE)
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def backward(loss: Tensor, tape: Tape | None = None):
    """Reverse-accumulate gradients of a scalar loss over the active tape."""
    tape = tape if tape is not None else _TAPE
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not require grad (nothing on the tape leads to it)")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape.nodes):
        if out.grad is not None:
            fn(out.grad)


# --------------------------------------------------------------------------
# Primitive ops
# --------------------------------------------------------------------------

def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.astype(DTYPE, copy=False)


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward_fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), backward_fn)


def reshape(x: Tensor, shape) -> Tensor:
    x = _coerce(x)
    out = Tensor(x.data.reshape(shape))

    def backward_fn(g):
        _accum(x, g.reshape(x.shape))

    return _record(out, (x,), backward_fn)


def tsum(x: Tensor, axis=None) -> Tensor:
    x = _coerce(x)
    # accumulate in float64: cheap on reduction-sized arrays, and keeps
    # central finite differences meaningful at eps=1e-3
    out = Tensor(x.data.sum(axis=axis, dtype=np.float64))

    def backward_fn(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(g, axis), x.shape))

    return _record(out, (x,), backward_fn)


def tmean(x: Tensor, axis=None) -> Tensor:
    x = _coerce(x)
    n = x.size if axis is None else x.shape[axis]
    out = Tensor(x.data.mean(axis=axis, dtype=np.float64))

    def backward_fn(g):
        scaled = g / DTYPE(n)
        if axis is None:
            _accum(x, np.broadcast_to(scaled, x.shape))
        else:
            _accum(x, np.broadcast_to(np.expand_dims(scaled, axis), x.shape))

    return _record(out, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    x = _coerce(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def backward_fn(g):
        # subgradient 0 at the kink
        _accum(x, g * (out.data > 0.0))

    return _record(out, (x,), backward_fn)


def stop_gradient(x: Tensor) -> Tensor:
    """Identity forward; no backward rule, so upstream gradient is exactly zero."""
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.requires_grad = False
    out.grad = None
    out.is_param = False
    out.name = None
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _coerce(x)
    out = Tensor(_sigmoid_np(x.data))

    def backward_fn(g):
        _accum(x, g * out.data * (1.0 - out.data))

    return _record(out, (x,), backward_fn)


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    pos = z >= 0
    out = np.empty_like(z)
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over all cells, numerically stable.

    ``targets`` is a constant {0,1} array of the same shape as ``logits``.
    """
    logits = _coerce(logits)
    t = np.asarray(targets, dtype=DTYPE)
    if t.shape != logits.shape:
        raise DimensionError(f"targets shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(loss.mean())

    def backward_fn(g):
        _accum(logits, g * (_sigmoid_np(z) - t) / DTYPE(z.size))

    return _record(out, (logits,), backward_fn)


def grad_check(f, x: Tensor, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be a pure function of
    its input. The error is ``max_i |analytic_i - fd_i|`` divided by
    ``max(|analytic|, |fd|, 1e-8)`` where ``|.|`` is the vector max
    magnitude: coordinates are compared against the gradient's overall
    scale. A per-coordinate ratio would be meaningless in float32 at
    eps=1e-3 wherever the true gradient is near zero, since central
    differences there measure only rounding noise.
    """
    if not (1e-5 <= eps <= 1e-2):
        raise ContractError(f"eps {eps} outside [1e-5, 1e-2]")
    with tape_scope() as tape:
        x.zero_grad()
        y = f(x)
        if y.size != 1:
            raise ContractError("grad_check requires a scalar-valued function")
        if not np.isfinite(y.data).all():
            raise NumericError("non-finite function value in grad_check")
        backward(y, tape)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).astype(np.float64)

    flat = x.data.reshape(-1)
    fd = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + DTYPE(eps)
            hi = f(x).item()
            flat[i] = orig - DTYPE(eps)
            lo = f(x).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * eps)
    if not np.isfinite(fd).all():
        raise NumericError("non-finite finite-difference value in grad_check")
    a = analytic.reshape(-1)
    scale = max(np.abs(a).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-8)
    return float(np.max(np.abs(a - fd)) / scale)
