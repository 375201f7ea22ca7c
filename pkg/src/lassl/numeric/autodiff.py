"""Tape-based reverse-mode differentiation over dense float64 matrices.

Every op takes :class:`Var` or array-like inputs and returns a :class:`Var`.
If any input lives on a :class:`Tape`, the result is appended to that tape
together with a closure mapping the output cotangent to input cotangents.
Tape order is creation order, which is already a topological order, so the
backward pass is a single reverse sweep.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from lassl.errors import DegenerateRowError, DimensionError, StateError


class Var:
    __slots__ = ("value", "parents", "vjp", "tape", "name")

    def __init__(self, value, parents=(), vjp=None, tape=None, name=None):
        self.value = value
        self.parents: tuple[Var, ...] = parents
        self.vjp: Callable | None = vjp
        self.tape: Tape | None = tape
        self.name: str | None = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Var{tag}(shape={self.shape})"


class Tape:
    """Records nodes in creation order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.params: dict[str, Var] = {}

    def param(self, name: str, value) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), tape=self, name=name)
        self.nodes.append(v)
        self.params[name] = v
        return v

    def constant(self, value) -> Var:
        return Var(np.asarray(value, dtype=np.float64))

    def __len__(self):
        return len(self.nodes)


def _lift(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64))


def _node(value, parents: Sequence[Var], vjp) -> Var:
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    if tape is None:
        return Var(value)
    out = Var(value, tuple(parents), vjp, tape)
    tape.nodes.append(out)
    return out


def backward(loss: Var, seed: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` with respect to every named tape parameter."""
    tape = loss.tape
    if tape is None:
        raise StateError("backward called on a value that was not recorded on a tape")
    if np.size(loss.value) != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.full(np.shape(loss.value), seed, dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node.vjp is None:
            if g is not None:
                grads[id(node)] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if parent.tape is None or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for name, p in tape.params.items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64)
    return out


# ---------------------------------------------------------------- primitives


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a) -> Var:
    a = _lift(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    """Elementwise product of equally shaped values."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c: float) -> Var:
    a = _lift(a)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def add_bias(a, bias) -> Var:
    """Row-broadcast ``a + bias`` with bias of shape (cols,)."""
    a, bias = _lift(a), _lift(bias)
    if a.value.ndim != 2 or bias.value.shape != (a.value.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} does not match {a.shape}")
    return _node(a.value + bias.value, (a, bias), lambda g: (g, g.sum(axis=0)))


def relu(a) -> Var:
    a = _lift(a)
    out = np.maximum(a.value, 0.0)
    return _node(out, (a,), lambda g: (g * (out > 0),))


def softplus(a) -> Var:
    a = _lift(a)
    x = a.value
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(out, (a,), lambda g: (g * sig,))


def l2_normalize_rows(a, eps: float = 1e-12) -> Var:
    a = _lift(a)
    x = a.value
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    if np.any(norms < eps):
        bad = int(np.argmax(norms < eps))
        raise DegenerateRowError(f"row {bad} has norm below {eps}; cannot normalize")
    y = x / norms[:, None]

    def vjp(g):
        dot = np.einsum("ij,ij->i", g, y)
        return ((g - y * dot[:, None]) / norms[:, None],)

    return _node(y, (a,), vjp)


def logsumexp_rows(a) -> Var:
    a = _lift(a)
    x = a.value
    mx = x.max(axis=1, keepdims=True)
    e = np.exp(x - mx)
    s = e.sum(axis=1, keepdims=True)
    out = (mx + np.log(s))[:, 0]
    soft = e / s
    return _node(out, (a,), lambda g: (soft * g[:, None],))


def diag(a) -> Var:
    a = _lift(a)
    x = a.value
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"diag needs a square matrix, got {x.shape}")
    n = x.shape[0]

    def vjp(g):
        out = np.zeros_like(x)
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _node(np.diagonal(x).copy(), (a,), vjp)


def total(a) -> Var:
    a = _lift(a)
    shape = a.value.shape
    return _node(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Var:
    a = _lift(a)
    shape = a.value.shape
    n = a.value.size
    return _node(np.sum(a.value) / n, (a,), lambda g: (np.full(shape, g / n),))


def take_rows(a, start: int, stop: int) -> Var:
    a = _lift(a)
    x = a.value

    def vjp(g):
        out = np.zeros_like(x)
        out[start:stop] = g
        return (out,)

    return _node(x[start:stop], (a,), vjp)
