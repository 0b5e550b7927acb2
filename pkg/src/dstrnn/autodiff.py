"""Minimal define-by-run reverse-mode automatic differentiation over numpy arrays.

Every primitive takes :class:`Tensor` operands and, when any operand requires a
gradient, records a :class:`TapeNode` on the output.  :func:`backward` walks the
recorded graph in reverse topological order and accumulates gradients into the
leaf tensors.

Shapes are never broadcast implicitly.  The only exception is a scalar operand
(shape ``()``) of :func:`add`, :func:`sub` and :func:`mul`.  Use :func:`expand`
to tile a tensor explicitly.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible for a primitive."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf while debug checks were enabled."""


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_state, "debug", False)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise :class:`NonFiniteError` whenever a primitive emits NaN/Inf."""
    prev = _debug()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = prev


@dataclass
class TapeNode:
    op_kind: str
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tensor:
    """Dense array with optional gradient storage."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            # numpy scalars (0-d results) keep their precision too
            if isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar, all routed through the primitives below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def constant_like(value, like: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_finite(op: str, out: np.ndarray) -> None:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _make(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if _debug():
        _check_finite(op, out)
    t = Tensor(out)
    if _grad_enabled() and any(x.requires_grad for x in inputs):
        t.requires_grad = True
        t.node = TapeNode(op, tuple(inputs), backward)
    return t


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = constant_like(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = constant_like(a, b)
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unscalar(g: np.ndarray, shape: tuple) -> np.ndarray:
    if shape == () and g.shape != ():
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Matrix product of 2-D tensors; ``transpose_b`` computes ``a @ b.T``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    bd = b.data.T if transpose_b else b.data
    if a.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}"
                         + (" (b transposed)" if transpose_b else ""))
    out = a.data @ bd

    def backward(g):
        ga = g @ bd.T
        gb = a.data.T @ g
        return ga, (gb.T if transpose_b else gb)

    return _make("matmul", out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same("add", a, b)
    out = a.data + b.data
    return _make("add", out, (a, b),
                 lambda g: (_unscalar(g, a.shape), _unscalar(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same("sub", a, b)
    out = a.data - b.data
    return _make("sub", out, (a, b),
                 lambda g: (_unscalar(g, a.shape), _unscalar(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_same("mul", a, b)
    out = a.data * b.data
    return _make("mul", out, (a, b),
                 lambda g: (_unscalar(g * b.data, a.shape), _unscalar(g * a.data, b.shape)))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def one_minus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _make("one_minus", 1.0 - x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "one_minus": one_minus,
    "exp": exp,
}


def elementwise(kind: str, *inputs) -> Tensor:
    """Dispatch a pointwise primitive by name."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*inputs)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: no parts")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].data.ndim
    ax = axis % ndim if ndim else 0
    ref = parts[0].shape
    for p in parts[1:]:
        if p.data.ndim != ndim or any(p.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {p.shape} along axis {axis}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make("concat", out, parts, backward)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("stack: no parts")
    for p in parts[1:]:
        if p.shape != parts[0].shape:
            raise ShapeError(f"stack: shapes {parts[0].shape} and {p.shape} differ")
    out = np.stack([p.data for p in parts])
    return _make("stack", out, parts, lambda g: tuple(g))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    if out.size != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    return _make("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got {x.shape}")
    out = np.ascontiguousarray(x.data.T)
    return _make("transpose", out, (x,), lambda g: (g.T,))


def slice_(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) slicing; gradient is scattered back into place."""
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make("slice", np.array(out), (x,), backward)


def take_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; repeated ids accumulate gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"row id {int(bad)} out of range for table with {n} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _make("take_rows", out, (table,), backward)


def expand(x: Tensor, n: int) -> Tensor:
    """Tile ``x`` ``n`` times along a new leading axis (explicit broadcast)."""
    x = as_tensor(x)
    out = np.broadcast_to(x.data, (n,) + x.shape).copy()
    return _make("expand", out, (x,), lambda g: (g.sum(axis=0),))


def sum_(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _make("sum", out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilised by max subtraction."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _make("softmax", out, (x,), backward)


PROB_FLOOR = 1e-12


def cross_entropy(pred: Tensor, gold) -> Tensor:
    """``-log(pred[gold])`` per row, with ``pred`` floored at 1e-12.

    A 1-D ``pred`` with an int ``gold`` gives a scalar; a 2-D ``pred`` with a
    1-D ``gold`` gives one loss per row.
    """
    pred = as_tensor(pred)
    gold_arr = np.asarray(gold, dtype=np.int64)
    classes = pred.shape[-1]
    if gold_arr.size and (gold_arr.min() < 0 or gold_arr.max() >= classes):
        raise IndexError(f"gold class out of range for {classes} classes: {gold}")
    if pred.data.ndim == 1:
        if gold_arr.ndim != 0:
            raise ShapeError(f"cross_entropy: 1-D prediction needs a scalar gold, got {gold_arr.shape}")
        rows = ()
        picked = pred.data[gold_arr]
    elif pred.data.ndim == 2:
        if gold_arr.shape != (pred.shape[0],):
            raise ShapeError(f"cross_entropy: gold shape {gold_arr.shape} vs prediction {pred.shape}")
        rows = np.arange(pred.shape[0])
        picked = pred.data[rows, gold_arr]
    else:
        raise ShapeError(f"cross_entropy: expected 1-D or 2-D prediction, got {pred.shape}")
    clamped = np.maximum(picked, PROB_FLOOR)
    out = (-np.log(clamped)).astype(pred.dtype)

    def backward(g):
        full = np.zeros_like(pred.data)
        local = np.where(picked >= PROB_FLOOR, -1.0 / clamped, 0.0).astype(pred.dtype)
        if pred.data.ndim == 1:
            full[gold_arr] = g * local
        else:
            full[rows, gold_arr] = g * local
        return (full,)

    return _make("cross_entropy", np.asarray(out), (pred,), backward)


def attend(weights: Tensor, states: Tensor) -> Tensor:
    """Weighted sum over time: ``weights`` [B, T] with ``states`` [T, B, H] -> [B, H]."""
    weights, states = as_tensor(weights), as_tensor(states)
    if (weights.data.ndim != 2 or states.data.ndim != 3
            or weights.shape != (states.shape[1], states.shape[0])):
        raise ShapeError(f"attend: weights {weights.shape} do not match states {states.shape}")
    out = np.einsum("bt,tbh->bh", weights.data, states.data)

    def backward(g):
        gw = np.einsum("bh,tbh->bt", g, states.data)
        gs = np.einsum("bt,bh->tbh", weights.data, g)
        return gw, gs

    return _make("attend", out, (weights, states), backward)


def detach(x: Tensor) -> Tensor:
    return Tensor(x.data)


# ------------------------------------------------------------------ backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        t, expanded = stack_.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack_.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for t in reversed(_topological(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.dtype)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Fresh gradients of ``loss`` w.r.t. ``params``; unused params get exact zeros."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
