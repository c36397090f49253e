"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to :class:`Var` objects as a
node ``(kind, parent indices, vjp)``.  Parents always precede their children,
so the node list is already in topological order and :func:`backward` is a
single reverse sweep.  Gradients for named parameters are accumulated into a
:class:`ParamStore`.

The tape is rebuilt for every forward pass and thrown away afterwards.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np


class ParamStore:
    """Named float64 parameter arrays with matching gradient accumulators."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        arr = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.params.items()})


class Var:
    """A value recorded on a tape. Supports the usual arithmetic operators."""

    __slots__ = ("tape", "index", "value")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)


class Tape:
    """Append-only record of operations.

    With ``record=False`` the tape only evaluates values; nothing is stored and
    no gradient can be taken.  Used for large no-grad renders.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self.kinds: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[Callable | None] = []
        self.leaf_names: dict[int, str] = {}

    def __len__(self):
        return len(self.kinds)

    def push(self, kind: str, value: np.ndarray, parents: tuple, vjp: Callable | None) -> Var:
        if not self.record:
            return Var(self, -1, value)
        live = tuple(p for p in parents if isinstance(p, Var) and p.index >= 0)
        if not live:
            vjp = None
        idx = len(self.kinds)
        self.kinds.append(kind)
        self.parents.append(tuple(p.index if isinstance(p, Var) else -1 for p in parents))
        self.vjps.append(vjp)
        return Var(self, idx, value)

    def const(self, value) -> Var:
        return Var(self, -1, np.asarray(value, dtype=np.float64))

    def leaf(self, value, name: str | None = None) -> Var:
        """A differentiable input. ``name`` links it to a ParamStore entry."""
        value = np.asarray(value, dtype=np.float64)
        if not self.record:
            return Var(self, -1, value)
        idx = len(self.kinds)
        self.kinds.append("leaf")
        self.parents.append(())
        self.vjps.append(None)
        if name is not None:
            self.leaf_names[idx] = name
        return Var(self, idx, value)

    def param(self, store: ParamStore, name: str) -> Var:
        return self.leaf(store.params[name], name)


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(tape, -1, np.asarray(x, dtype=np.float64))


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise binary -----------------------------------------------------

def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.value.shape, b.value.shape
    return t.push("add", a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    sa, sb = a.value.shape, b.value.shape
    return t.push("sub", a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    return t.push("mul", av * bv, (a, b),
                  lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    out = av / bv
    return t.push("div", out, (a, b),
                  lambda g: (_unbroadcast(g / bv, av.shape),
                             _unbroadcast(-g * out / bv, bv.shape)))


def where(mask, a, b) -> Var:
    """Select ``a`` where ``mask`` else ``b``. Both branches must be finite."""
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    mask = np.asarray(mask, dtype=bool)
    sa, sb = a.value.shape, b.value.shape
    return t.push("where", np.where(mask, a.value, b.value), (a, b),
                  lambda g: (_unbroadcast(np.where(mask, g, 0.0), sa),
                             _unbroadcast(np.where(mask, 0.0, g), sb)))


# --- elementwise unary ------------------------------------------------------

def neg(a: Var) -> Var:
    return a.tape.push("neg", -a.value, (a,), lambda g: (-g,))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.push("exp", out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    v = a.value
    return a.tape.push("log", np.log(v), (a,), lambda g: (g / v,))


def sin(a: Var) -> Var:
    v = a.value
    return a.tape.push("sin", np.sin(v), (a,), lambda g: (g * np.cos(v),))


def cos(a: Var) -> Var:
    v = a.value
    return a.tape.push("cos", np.cos(v), (a,), lambda g: (-g * np.sin(v),))


def absolute(a: Var) -> Var:
    v = a.value
    return a.tape.push("abs", np.abs(v), (a,), lambda g: (g * np.sign(v),))


def square(a: Var) -> Var:
    v = a.value
    return a.tape.push("square", v * v, (a,), lambda g: (2.0 * g * v,))


def softplus_value(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def sigmoid_value(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(a: Var) -> Var:
    v = a.value
    e = np.exp(-np.abs(v))
    out = np.log1p(e)
    out += np.maximum(v, 0.0)

    def vjp(g):
        # sigmoid(v) from the cached exp(-|v|)
        num = np.where(v >= 0, 1.0, e)
        num /= 1.0 + e
        return (g * num,)

    return a.tape.push("softplus", out, (a,), vjp)


def sigmoid(a: Var) -> Var:
    out = sigmoid_value(a.value)
    return a.tape.push("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


# --- linear algebra, reductions, shape --------------------------------------

def matmul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    av, bv = a.value, b.value
    return t.push("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def vsum(a: Var, axis=None, keepdims: bool = False) -> Var:
    shape = a.value.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.push("sum", a.value.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.value.shape[axis]
    return vsum(a, axis=axis) * (1.0 / n)


def cumsum(a: Var, axis: int = -1) -> Var:
    def vjp(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return a.tape.push("cumsum", np.cumsum(a.value, axis=axis), (a,), vjp)


def reshape(a: Var, shape) -> Var:
    old = a.value.shape
    return a.tape.push("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a: Var, key) -> Var:
    shape = a.value.shape
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in parts)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[key] = g
        else:
            np.add.at(out, key, g)
        return (out,)

    return a.tape.push("getitem", a.value[key], (a,), vjp)


def take_along_axis(a: Var, indices: np.ndarray, axis: int) -> Var:
    """Gather along ``axis``; ``indices`` must not repeat (e.g. an argsort)."""
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.put_along_axis(out, indices, g, axis=axis)
        return (out,)

    return a.tape.push("take_along_axis", np.take_along_axis(a.value, indices, axis=axis), (a,), vjp)


def concat(xs: Iterable, axis: int = 0) -> Var:
    xs = list(xs)
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return t.push("concat", np.concatenate([x.value for x in xs], axis=axis), tuple(xs),
                  lambda g: tuple(np.split(g, splits, axis=axis)))


# --- backward ---------------------------------------------------------------

def backward(tape: Tape, output: Var, store: ParamStore | None = None,
             seed: np.ndarray | None = None) -> list:
    """Reverse sweep from ``output``.

    ``output`` must be a scalar unless an explicit upstream ``seed`` is given.
    Gradients of named leaves are added into ``store.grads``.  Returns the list
    of adjoints indexed by node (``None`` for nodes off every path).
    """
    if not tape.record or output.index < 0:
        raise ValueError("output is not recorded on a tape")
    if seed is None:
        if output.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.value.shape}")
        seed = np.ones_like(output.value)
    adj: list = [None] * (output.index + 1)
    adj[output.index] = np.asarray(seed, dtype=np.float64)
    for i in range(output.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        vjp = tape.vjps[i]
        if vjp is None:
            continue
        for p, gp in zip(tape.parents[i], vjp(g)):
            if p < 0 or gp is None:
                continue
            adj[p] = gp if adj[p] is None else adj[p] + gp
    if store is not None:
        for idx, name in tape.leaf_names.items():
            if idx < len(adj) and adj[idx] is not None:
                store.grads[name] += adj[idx]
    return adj


def grad_of(adjoints: list, var: Var) -> np.ndarray:
    if 0 <= var.index < len(adjoints) and adjoints[var.index] is not None:
        return adjoints[var.index]
    return np.zeros_like(var.value)


def grad_check(f: Callable[[Tape, ParamStore], Var], store: ParamStore, eps: float = 1e-5,
               names: Iterable[str] | None = None, max_entries: int | None = None,
               seed: int = 0) -> float:
    """Largest ``|g_ad - g_fd| / max(1, |g_fd|)`` over the checked entries.

    ``f`` builds a scalar on a fresh tape from the parameters in ``store``.
    Central differences of step ``eps``; with ``max_entries`` only a random
    subset of each parameter's entries is perturbed.
    """
    names = list(store.names() if names is None else names)
    work = store.copy()
    tape = Tape()
    out = f(tape, work)
    if not np.isfinite(out.value).all():
        raise ValueError("f is not finite at the base point")
    work.zero_grad()
    backward(tape, out, work)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        p = work.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        g_ad = work.grads[name].reshape(-1)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            fp = float(f(Tape(record=False), work).value)
            flat[k] = orig - eps
            fm = float(f(Tape(record=False), work).value)
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"f is not finite when perturbing {name}[{k}]")
            g_fd = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(g_ad[k] - g_fd) / max(1.0, abs(g_fd)))
    return worst
