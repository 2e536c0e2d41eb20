"""Dense reverse-mode differentiation over numpy arrays.

A :class:`Tape` records a closed set of primitives (matmul, add, mul, tanh,
softplus, exp, log, sum, clamp) as they are evaluated. ``Tape.backward``
walks the record once in reverse and accumulates vector-Jacobian products.

Everything is float64. Parameters are registered on a tape by identity, so a
network used twice in one graph accumulates both contributions into the same
gradient slot.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Var",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "Mlp",
    "init_mlp",
    "mlp_forward",
    "Adam",
    "finite_diff_check",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A value living on a tape. Supports ``+ - *`` and unary ``-``."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.add(self, self.tape.mul(other, -1.0))

    def __rsub__(self, other):
        return self.tape.add(self.tape.mul(self, -1.0), other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.value.shape})"


@dataclass
class _Node:
    op: str
    parents: tuple
    vjp: object  # callable(grad, needs) -> tuple of parent grads (None where not needed)
    requires: bool


class Tape:
    """Record of primitive evaluations with per-node gradient slots.

    Only nodes that depend on a parameter (or a :meth:`variable` leaf) carry
    gradients; the reverse pass skips everything else.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self.grads: list[np.ndarray | None] = []
        self._params: dict[int, int] = {}
        self._done = False

    # -- leaves -----------------------------------------------------------
    def _push(self, op, value, parents=(), vjp=None, requires=None):
        n = len(self.nodes)
        for p in parents:
            if p >= n:
                raise AssertionError("parent must precede its consumer")
        if requires is None:
            requires = any(self.nodes[p].requires for p in parents)
        self.nodes.append(_Node(op, tuple(parents), vjp, requires))
        self.values.append(value)
        self.grads.append(None)
        return Var(self, n, value)

    def constant(self, value):
        return self._push("const", np.asarray(value, dtype=np.float64), requires=False)

    def variable(self, value):
        """A differentiable leaf that is not a parameter (e.g. an action input)."""
        return self._push("var", np.array(value, dtype=np.float64), requires=True)

    def param(self, array):
        """Register ``array`` as a differentiable leaf (deduplicated by id)."""
        key = id(array)
        if key in self._params:
            i = self._params[key]
            return Var(self, i, self.values[i])
        v = self._push("param", array, requires=True)
        self._params[key] = v.index
        return v

    def lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("Var belongs to a different tape")
            return x
        return self.constant(x)

    # -- primitives -------------------------------------------------------
    def matmul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g, needs):
            return (g @ bv.T if needs[0] else None, av.T @ g if needs[1] else None)

        return self._push("matmul", out, (a.index, b.index), vjp)

    def add(self, a, b):
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.value.shape, b.value.shape
        out = a.value + b.value

        def vjp(g, needs):
            return (_unbroadcast(g, sa) if needs[0] else None,
                    _unbroadcast(g, sb) if needs[1] else None)

        return self._push("add", out, (a.index, b.index), vjp)

    def mul(self, a, b):
        a, b = self.lift(a), self.lift(b)
        av, bv = a.value, b.value
        out = av * bv

        def vjp(g, needs):
            return (_unbroadcast(g * bv, av.shape) if needs[0] else None,
                    _unbroadcast(g * av, bv.shape) if needs[1] else None)

        return self._push("mul", out, (a.index, b.index), vjp)

    def tanh(self, a):
        a = self.lift(a)
        out = np.tanh(a.value)
        return self._push("tanh", out, (a.index,), lambda g, needs: (g * (1.0 - out * out),))

    def softplus(self, a):
        a = self.lift(a)
        x = a.value
        out = np.logaddexp(0.0, x)

        def vjp(g, needs):
            # sigmoid(x) without overflow
            return (g * np.exp(-np.logaddexp(0.0, -x)),)

        return self._push("softplus", out, (a.index,), vjp)

    def exp(self, a):
        a = self.lift(a)
        out = np.exp(a.value)
        return self._push("exp", out, (a.index,), lambda g, needs: (g * out,))

    def log(self, a):
        a = self.lift(a)
        x = a.value
        return self._push("log", np.log(x), (a.index,), lambda g, needs: (g / x,))

    def sum(self, a, axis=None, keepdims=False):
        a = self.lift(a)
        shape = a.value.shape
        out = np.sum(a.value, axis=axis, keepdims=keepdims)

        def vjp(g, needs):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return self._push("sum", np.asarray(out, dtype=np.float64), (a.index,), vjp)

    def clamp(self, a, lo=-np.inf, hi=np.inf):
        a = self.lift(a)
        x = a.value
        out = np.clip(x, lo, hi)

        def vjp(g, needs):
            return (np.where((x >= lo) & (x <= hi), g, 0.0),)

        return self._push("clamp", out, (a.index,), vjp)

    # -- compositions (no new primitives) ---------------------------------
    def relu(self, a):
        return self.clamp(a, 0.0, np.inf)

    def mean(self, a):
        a = self.lift(a)
        return self.mul(self.sum(a), 1.0 / a.value.size)

    def square(self, a):
        return self.mul(a, a)

    def select(self, mask, a, b):
        """``mask ? a : b`` for a constant mask; the gradient follows the chosen branch."""
        m = np.asarray(mask, dtype=np.float64)
        return self.add(self.mul(a, m), self.mul(b, 1.0 - m))

    # -- reverse pass -----------------------------------------------------
    def backward(self, out: Var):
        if out.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {out.value.shape}")
        if self._done:
            raise RuntimeError("tape already consumed; build a fresh one")
        self._done = True
        nodes, grads = self.nodes, self.grads
        grads[out.index] = np.ones_like(out.value)
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = nodes[i]
            if g is None or node.vjp is None or not node.requires:
                continue
            needs = tuple(nodes[p].requires for p in node.parents)
            for p, pg in zip(node.parents, node.vjp(g, needs)):
                if pg is None:
                    continue
                if grads[p] is None:
                    grads[p] = np.array(pg, dtype=np.float64)
                else:
                    grads[p] = grads[p] + pg
        return self

    def grad(self, x):
        """Gradient for a Var or a registered parameter array (zeros if unreached)."""
        if isinstance(x, Var):
            i = x.index
            value = x.value
        else:
            i = self._params.get(id(x))
            value = x
            if i is None:
                return np.zeros_like(value)
        g = self.grads[i]
        return np.zeros_like(value) if g is None else g


# ---------------------------------------------------------------------------
# Multilayer perceptron


@dataclass
class Mlp:
    """Weights and biases of a ReLU network; the final layer is linear."""

    layers: list = field(default_factory=list)

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i - 1][0].shape[1] != self.layers[i][0].shape[0]:
                raise ShapeError(f"layer {i} input does not chain with layer {i - 1}")

    @property
    def arrays(self):
        return [a for layer in self.layers for a in layer]

    @property
    def in_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self):
        return self.layers[-1][0].shape[1]

    def copy(self):
        return Mlp([(w.copy(), b.copy()) for w, b in self.layers])

    def assign(self, other):
        for dst, src in zip(self.arrays, other.arrays):
            dst[...] = src


def init_mlp(sizes, rng):
    """Glorot-uniform weights, zero biases."""
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return Mlp(layers)


def mlp_forward(params: Mlp, x, tape: Tape | None = None, trainable=True):
    """Evaluate the network.

    With ``tape=None`` this is a plain numpy evaluation. With a tape, every
    primitive is recorded; ``trainable=False`` records the weights as
    constants so gradients still reach ``x`` but not the parameters.
    """
    xv = x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)
    if xv.shape[-1] != params.in_dim:
        raise ShapeError(f"layer 0 expects input dim {params.in_dim}, got {xv.shape[-1]}")
    last = len(params.layers) - 1
    if tape is None:
        h = xv
        for i, (w, b) in enumerate(params.layers):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h
    h = tape.lift(x)
    for i, (w, b) in enumerate(params.layers):
        if h.value.shape[-1] != w.shape[0]:
            raise ShapeError(f"layer {i} expects input dim {w.shape[0]}, got {h.value.shape[-1]}")
        wv = tape.param(w) if trainable else tape.constant(w)
        bv = tape.param(b) if trainable else tape.constant(b)
        h = tape.add(tape.matmul(h, wv), bv)
        if i < last:
            h = tape.relu(h)
    return h


# ---------------------------------------------------------------------------
# Adam


class Adam:
    """Adam with bias correction; updates arrays in place."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        grads = list(grads)
        if len(grads) != len(self.params):
            raise ShapeError("one gradient per parameter required")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient; update aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {"t": self.t, "m": self.m, "v": self.v}


def finite_diff_check(loss_fn, params, h=1e-6):
    """Max over coordinates of |analytic - numeric| / max(1, |numeric|).

    ``loss_fn(tape)`` must build the loss on the given tape (reading the
    arrays in ``params``) and return the scalar Var. ``loss_fn(None)`` must
    return the same loss as a float.
    """
    tape = Tape()
    out = loss_fn(tape)
    tape.backward(out)
    analytic = [tape.grad(p).copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = float(loss_fn(None))
            flat[j] = old - h
            down = float(loss_fn(None))
            flat[j] = old
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, abs(gflat[j] - numeric) / max(1.0, abs(numeric)))
    return worst
