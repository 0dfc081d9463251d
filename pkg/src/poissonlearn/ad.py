"""Define-by-run reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tape` is an append-only Wengert list.  Every primitive is a pair of a
forward function and a vector-Jacobian product; :class:`Var` objects are handles
to tape nodes.  The functional API (``softplus``, ``matvec``, ...) accepts plain
numpy arrays as well, in which case nothing is recorded and the result is an
ordinary array.  Model code is written once and runs in both modes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not fit a primitive's signature."""


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _swap(a):
    return np.swapaxes(a, -1, -2)


# --- primitive table: name -> (forward, vjp) --------------------------------
# vjp(g, out, *inputs, **attrs) returns one cotangent per input.

def _matvec_check(w, x):
    if w.ndim != 2 or x.shape[-1:] != w.shape[1:]:
        raise ShapeError(f"matvec: cannot apply matrix {w.shape} to vectors {x.shape}")


def _matvec_fwd(w, x):
    _matvec_check(w, x)
    return x @ w.T


def _matvec_vjp(g, out, w, x):
    gw = np.tensordot(g, x, axes=(tuple(range(g.ndim - 1)), tuple(range(x.ndim - 1))))
    return gw, g @ w


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return np.matmul(a, b)


def _matmul_vjp(g, out, a, b):
    return _unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)


def _cross_fwd(a, b):
    if a.shape[-1] != 3 or b.shape[-1] != 3:
        raise ShapeError(f"cross3: operands must have trailing dimension 3, got {a.shape} and {b.shape}")
    return np.cross(a, b)


def _cross_vjp(g, out, a, b):
    return _unbroadcast(np.cross(b, g), a.shape), _unbroadcast(np.cross(g, a), b.shape)


def _dot_fwd(a, b):
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"dot: trailing dimensions differ, {a.shape} and {b.shape}")
    return np.sum(a * b, axis=-1)


def _dot_vjp(g, out, a, b):
    g = g[..., None]
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _sum_fwd(a, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_vjp(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _l2norm_fwd(a):
    return np.sqrt(np.sum(a * a, axis=-1))


def _l2norm_vjp(g, out, a):
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(out > 0, g / np.where(out > 0, out, 1.0), 0.0)
    return (a * scale[..., None],)


def _elementwise(name, fn):
    def fwd(a, b):
        try:
            return fn(a, b)
        except ValueError as exc:
            raise ShapeError(f"{name}: cannot broadcast {np.shape(a)} with {np.shape(b)}") from exc
    return fwd


def _getitem_vjp(g, out, a, index):
    ga = np.zeros_like(a)
    np.add.at(ga, index, g)
    return (ga,)


def _concat_vjp(g, out, *parts, axis=0):
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _stack_vjp(g, out, *parts, axis=0):
    return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))


PRIMITIVES: dict[str, tuple[Callable, Callable]] = {
    "add": (_elementwise("add", np.add),
            lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))),
    "sub": (_elementwise("sub", np.subtract),
            lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))),
    "mul": (_elementwise("mul", np.multiply),
            lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))),
    "div": (_elementwise("div", np.divide),
            lambda g, out, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))),
    "neg": (np.negative, lambda g, out, a: (-g,)),
    "matvec": (_matvec_fwd, _matvec_vjp),
    "matmul": (_matmul_fwd, _matmul_vjp),
    "dot": (_dot_fwd, _dot_vjp),
    "cross3": (_cross_fwd, _cross_vjp),
    "softplus": (lambda a: np.logaddexp(0.0, a), lambda g, out, a: (g * _sigmoid(a),)),
    "sigmoid": (_sigmoid, lambda g, out, a: (g * out * (1.0 - out),)),
    "exp": (np.exp, lambda g, out, a: (g * out,)),
    "log": (np.log, lambda g, out, a: (g / a,)),
    "square": (np.square, lambda g, out, a: (2.0 * a * g,)),
    "sum": (_sum_fwd, _sum_vjp),
    "l2norm": (_l2norm_fwd, _l2norm_vjp),
    # structural
    "reshape": (lambda a, shape: np.reshape(a, shape), lambda g, out, a, shape: (g.reshape(a.shape),)),
    "transpose": (lambda a, axes: np.transpose(a, axes),
                  lambda g, out, a, axes: (np.transpose(g, np.argsort(axes)),)),
    "getitem": (lambda a, index: a[index], _getitem_vjp),
    "concat": (lambda *parts, axis=0: np.concatenate(parts, axis=axis), _concat_vjp),
    "stack": (lambda *parts, axis=0: np.stack(parts, axis=axis), _stack_vjp),
}


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    value: np.ndarray


@dataclass
class Tape:
    """Append-only record of primitive applications, in topological order."""

    nodes: list[Node] = field(default_factory=list)

    def _append(self, op, inputs, attrs, value) -> "Var":
        self.nodes.append(Node(op, tuple(inputs), attrs, value))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value) -> "Var":
        """Register a differentiable input."""
        return self._append("leaf", (), {}, np.array(value, dtype=np.float64))

    def const(self, value) -> "Var":
        return self._append("const", (), {}, np.asarray(value, dtype=np.float64))

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from its inputs; returns the fresh values."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op in ("leaf", "const"):
                values.append(node.value)
            else:
                fwd = PRIMITIVES[node.op][0]
                values.append(np.asarray(fwd(*(values[i] for i in node.inputs), **node.attrs)))
        return values

    def __len__(self) -> int:
        return len(self.nodes)


class Var:
    """Handle to a tape node.  Carries the forward value as ``.value``."""

    __slots__ = ("tape", "id")
    __array_priority__ = 1000  # make ndarray <op> Var defer to Var

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other): return record("add", self, other)
    def __radd__(self, other): return record("add", other, self)
    def __sub__(self, other): return record("sub", self, other)
    def __rsub__(self, other): return record("sub", other, self)
    def __mul__(self, other): return record("mul", self, other)
    def __rmul__(self, other): return record("mul", other, self)
    def __truediv__(self, other): return record("div", self, other)
    def __rtruediv__(self, other): return record("div", other, self)
    def __neg__(self): return record("neg", self)
    def __matmul__(self, other): return record("matmul", self, other)
    def __rmatmul__(self, other): return record("matmul", other, self)

    def __getitem__(self, index):
        return record("getitem", self, index=index)


def record(op: str, *inputs, **attrs):
    """Apply primitive ``op``.

    If any input is a :class:`Var`, the result is recorded on that Var's tape
    and returned as a Var; otherwise the forward value is returned directly.
    """
    try:
        fwd, _ = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    tape = next((x.tape for x in inputs if isinstance(x, Var)), None)
    if tape is None:
        return fwd(*(np.asarray(x, dtype=np.float64) for x in inputs), **attrs)
    ids = []
    for x in inputs:
        if isinstance(x, Var):
            if x.tape is not tape:
                raise ValueError(f"{op}: operands live on different tapes")
            ids.append(x.id)
        else:
            ids.append(tape.const(x).id)
    vals = [tape.nodes[i].value for i in ids]
    try:
        out = fwd(*vals, **attrs)
    except ShapeError:
        raise
    except (ValueError, IndexError) as exc:
        raise ShapeError(f"{op}: rejected operand shapes {[v.shape for v in vals]}: {exc}") from exc
    return tape._append(op, ids, attrs, np.asarray(out, dtype=np.float64))


def backward(tape: Tape, seed: int | Var) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar node.

    Returns a map node-id -> adjoint for every node the seed depends on.
    """
    seed_id = seed.id if isinstance(seed, Var) else int(seed)
    seed_value = tape.nodes[seed_id].value
    if seed_value.size != 1:
        raise ValueError(f"backward seed must be scalar, got shape {seed_value.shape}")
    adjoints: dict[int, np.ndarray] = {seed_id: np.ones_like(seed_value)}
    for idx in range(seed_id, -1, -1):
        g = adjoints.get(idx)
        node = tape.nodes[idx]
        if g is None or not node.inputs:
            continue
        _, vjp = PRIMITIVES[node.op]
        inputs = [tape.nodes[i].value for i in node.inputs]
        for i, gi in zip(node.inputs, vjp(g, node.value, *inputs, **node.attrs)):
            if i in adjoints:
                adjoints[i] = adjoints[i] + gi
            else:
                adjoints[i] = gi
    return adjoints


def grad(loss: Var, wrt: list[Var]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` with respect to each Var in ``wrt``."""
    adj = backward(loss.tape, loss)
    return [adj.get(v.id, np.zeros_like(v.value)) for v in wrt]


def value_of(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


# --- functional API -----------------------------------------------------------

def add(a, b): return record("add", a, b)
def sub(a, b): return record("sub", a, b)
def mul(a, b): return record("mul", a, b)
def div(a, b): return record("div", a, b)
def matvec(w, x): return record("matvec", w, x)
def matmul(a, b): return record("matmul", a, b)
def dot(a, b): return record("dot", a, b)
def cross3(a, b): return record("cross3", a, b)
def softplus(a): return record("softplus", a)
def sigmoid(a): return record("sigmoid", a)
def exp(a): return record("exp", a)
def log(a): return record("log", a)
def square(a): return record("square", a)
def l2norm(a): return record("l2norm", a)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    if isinstance(axis, list):
        axis = tuple(axis)
    return record("sum", a, axis=axis, keepdims=keepdims)


def reshape(a, shape): return record("reshape", a, shape=tuple(shape))
def transpose(a, axes): return record("transpose", a, axes=tuple(axes))
def concat(parts, axis=0): return record("concat", *parts, axis=axis)
def stack(parts, axis=0): return record("stack", *parts, axis=axis)
