"""A small tape-based reverse-mode automatic differentiation engine.

Values are float64 numpy arrays of rank 0, 1 or 2. A rank-2 value is read as a
batch of row vectors, so ``affine`` maps ``(batch, n_in) -> (batch, n_out)``.
Binary elementwise ops accept numpy broadcasting between these shapes and
reduce gradients back to each operand's shape.

Complex quantities are carried as a pair of real nodes ``(re, im)``; since
every loss is real this gives exact gradients without complex calculus.

Example
-------
>>> tape = Tape()
>>> w = Param(np.array([1.0, 2.0]))
>>> loss = sum_(square(tape.param(w)))
>>> tape.backward(loss)
>>> w.grad
array([2., 4.])
"""
from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


class Param:
    """Trainable tensor with a gradient accumulator."""

    def __init__(self, value, name: str = ""):
        self.value = np.array(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Param({self.name or self.id}, shape={self.value.shape})"


class Node:
    __slots__ = ("value", "parents", "vjp", "tape", "param", "index")

    def __init__(self, tape, value, parents=(), vjp=None, param=None):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.param = param
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    # operator sugar keeps model code readable
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, cols):
        return take(self, cols)

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._param_nodes: dict[int, Node] = {}

    def constant(self, value) -> Node:
        return Node(self, np.asarray(value, dtype=np.float64))

    def param(self, p: Param) -> Node:
        node = self._param_nodes.get(p.id)
        if node is None:
            node = Node(self, p.value, param=p)
            self._param_nodes[p.id] = node
        return node

    def backward(self, root: Node, seed: float = 1.0):
        """Accumulate d(root)/d(param) into ``Param.grad`` for every reachable param."""
        if root.tape is not self:
            raise ValueError("root was recorded on a different tape")
        if root.value.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {root.value.shape}")
        grads: dict[int, np.ndarray] = {root.index: np.full(root.value.shape, float(seed))}
        for node in reversed(self.nodes[: root.index + 1]):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            if node.param is not None:
                node.param.grad = node.param.grad + g
                continue
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not isinstance(parent, Node):
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg


def backward(root: Node, seed: float = 1.0):
    root.tape.backward(root, seed)


# --- helpers ---------------------------------------------------------------


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise ValueError("at least one operand must be a Node")


def _lift(tape, x):
    return x if isinstance(x, Node) else tape.constant(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}") from None


# --- primitives --------------------------------------------------------------


def add(x, y) -> Node:
    tape = _tape_of(x, y)
    x, y = _lift(tape, x), _lift(tape, y)
    _check_broadcast(x.value, y.value)
    return Node(
        tape,
        x.value + y.value,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
    )


def sub(x, y) -> Node:
    tape = _tape_of(x, y)
    x, y = _lift(tape, x), _lift(tape, y)
    _check_broadcast(x.value, y.value)
    return Node(
        tape,
        x.value - y.value,
        (x, y),
        lambda g: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)),
    )


def mul(x, y) -> Node:
    tape = _tape_of(x, y)
    x, y = _lift(tape, x), _lift(tape, y)
    _check_broadcast(x.value, y.value)
    return Node(
        tape,
        x.value * y.value,
        (x, y),
        lambda g: (_unbroadcast(g * y.value, x.shape), _unbroadcast(g * x.value, y.shape)),
    )


def neg(x: Node) -> Node:
    return Node(x.tape, -x.value, (x,), lambda g: (-g,))


def scale(x: Node, c: float) -> Node:
    c = float(c)
    return Node(x.tape, c * x.value, (x,), lambda g: (c * g,))


def square(x: Node) -> Node:
    return Node(x.tape, x.value * x.value, (x,), lambda g: (2.0 * x.value * g,))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return Node(x.tape, y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Node) -> Node:
    y = np.exp(x.value)
    return Node(x.tape, y, (x,), lambda g: (g * y,))


def log(x: Node) -> Node:
    if np.any(x.value <= 0):
        raise ValueError("log requires strictly positive input")
    return Node(x.tape, np.log(x.value), (x,), lambda g: (g / x.value,))


def cos(x: Node) -> Node:
    return Node(x.tape, np.cos(x.value), (x,), lambda g: (-g * np.sin(x.value),))


def sin(x: Node) -> Node:
    return Node(x.tape, np.sin(x.value), (x,), lambda g: (g * np.cos(x.value),))


def sum_(x: Node, axis=None) -> Node:
    """Sum over all entries (``axis=None``) or along one axis."""
    y = np.sum(x.value, axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Node(x.tape, np.asarray(y), (x,), vjp)


def mean(x: Node, axis=None) -> Node:
    n = x.value.size if axis is None else x.value.shape[axis]
    return scale(sum_(x, axis), 1.0 / n)


def affine(W, x, b) -> Node:
    """``y = x @ W.T + b`` for ``W`` of shape ``(n_out, n_in)``."""
    tape = _tape_of(W, x, b)
    W, x, b = _lift(tape, W), _lift(tape, x), _lift(tape, b)
    if W.value.ndim != 2 or x.value.shape[-1] != W.value.shape[1]:
        raise ValueError(f"affine shape mismatch: W{W.shape} x{x.shape}")
    if b.value.shape != (W.value.shape[0],):
        raise ValueError(f"affine bias shape {b.shape} != ({W.value.shape[0]},)")
    y = x.value @ W.value.T + b.value

    def vjp(g):
        gx = g @ W.value
        if x.value.ndim == 1:
            gW = np.outer(g, x.value)
            gb = g
        else:
            gW = g.T @ x.value
            gb = g.sum(axis=0)
        return gW, gx, gb

    return Node(tape, y, (W, x, b), vjp)


def matvec(M, x) -> Node:
    """``y = M x`` applied to every row of ``x``."""
    tape = _tape_of(M, x)
    M, x = _lift(tape, M), _lift(tape, x)
    if M.value.ndim != 2 or x.value.shape[-1] != M.value.shape[1]:
        raise ValueError(f"matvec shape mismatch: M{M.shape} x{x.shape}")
    y = x.value @ M.value.T

    def vjp(g):
        gM = np.outer(g, x.value) if x.value.ndim == 1 else g.T @ x.value
        return gM, g @ M.value

    return Node(tape, y, (M, x), vjp)


def take(x: Node, cols) -> Node:
    """Select entries along the last axis (index array or slice)."""
    y = x.value[..., cols]

    def vjp(g):
        out = np.zeros_like(x.value)
        if isinstance(cols, slice):
            out[..., cols] = g
        else:
            np.add.at(out, (..., cols), g)
        return (out,)

    return Node(x.tape, y, (x,), vjp)


def concat(xs, axis=-1) -> Node:
    tape = _tape_of(*xs)
    xs = [_lift(tape, x) for x in xs]
    y = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([x.value.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Node(tape, y, tuple(xs), vjp)


def column(x: Node) -> Node:
    """Reshape a length-B vector to a ``(B, 1)`` column for row-wise scaling."""
    return Node(x.tape, x.value[:, None], (x,), lambda g: (g[:, 0],))


def normalize_l2(x: Node) -> Node:
    """Scale a vector (or each row) to unit Euclidean norm."""
    norm = np.linalg.norm(x.value, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ValueError("cannot normalise a zero vector")
    y = x.value / norm

    def vjp(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return Node(x.tape, y, (x,), vjp)


def abs2(re: Node, im: Node) -> Node:
    """Squared modulus of a complex vector stored as ``(re, im)``."""
    return Node(
        re.tape,
        re.value * re.value + im.value * im.value,
        (re, im),
        lambda g: (2.0 * g * re.value, 2.0 * g * im.value),
    )


def complex_matvec(U, psi):
    """Apply a complex matrix ``U = (U_re, U_im)`` to ``psi = (re, im)``."""
    Ur, Ui = U
    re, im = psi
    out_re = sub(matvec(Ur, re), matvec(Ui, im))
    out_im = add(matvec(Ur, im), matvec(Ui, re))
    return out_re, out_im


# --- optimisation ----------------------------------------------------------


class AdamState:
    __slots__ = ("m", "v")

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)


class Adam:
    """Adam with bias correction. Gradients are zeroed after every step."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = {p.id: AdamState(p.shape) for p in self.params}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p in self.params:
            st = self.state[p.id]
            g = p.grad
            st.m = self.beta1 * st.m + (1.0 - self.beta1) * g
            st.v = self.beta2 * st.v + (1.0 - self.beta2) * g * g
            p.value -= self.lr * (st.m / c1) / (np.sqrt(st.v / c2) + self.eps)
        self.zero_grad()

    def state_dict(self):
        return {
            "step_count": self.step_count,
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }
