"""Reverse-mode differentiation on a dynamic graph of numpy arrays.

Every operation returns a ``Node`` whose backward rules are themselves
expressed with ``Node`` operations, so gradients are ordinary graph values
and can be differentiated again (needed for physics losses that penalize
input gradients).
"""

import numpy as np

PDIV_GUARD = 1e-9


class Node:
    """A value in the differentiation graph.

    ``parents`` and ``vjps`` are parallel tuples: ``vjps[k](g)`` maps the
    incoming gradient node ``g`` to the gradient contribution for
    ``parents[k]``, using Node ops only.
    """

    __slots__ = ("value", "parents", "vjps")

    # defer mixed ndarray-Node arithmetic to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"

    # operator sugar -------------------------------------------------
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

    def __getitem__(self, idx):
        return take(self, idx)


def as_node(x):
    return x if isinstance(x, Node) else Node(x)


def is_node(x):
    return isinstance(x, Node)


def _val(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.value.shape == shape:
        return g
    extra = g.value.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.value.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.value.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value - b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(neg(g), b.value.shape),
        ),
    )


def neg(a):
    a = as_node(a)
    return Node(-a.value, (a,), (lambda g: neg(g),))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(mul(g, b), a.value.shape),
            lambda g: _unbroadcast(mul(g, a), b.value.shape),
        ),
    )


def div(a, b):
    a, b = as_node(a), as_node(b)
    return Node(
        a.value / b.value,
        (a, b),
        (
            lambda g: _unbroadcast(div(g, b), a.value.shape),
            lambda g: _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.value.shape),
        ),
    )


def protected_div(a, b, guard=PDIV_GUARD):
    """Division that returns 1.0 wherever ``|b| < guard``."""
    a, b = as_node(a), as_node(b)
    small = np.abs(b.value) < guard
    safe = np.where(small, 1.0, b.value)
    out = np.where(small, 1.0, a.value / safe)
    live = Node((~small).astype(np.float64))  # constant mask
    # b*b + small keeps denominators nonzero where the guard fired; the
    # mask zeroes those entries so the patched value never leaks gradient
    patched_sq = add(mul(b, b), Node(small.astype(np.float64)))
    return Node(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(div(mul(g, live), Node(safe)), a.value.shape),
            lambda g: _unbroadcast(neg(div(mul(mul(g, live), a), patched_sq)), b.value.shape),
        ),
    )


def pow_int(a, k):
    """Integer power, k >= 0."""
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ValueError(f"pow_int exponent must be a non-negative integer, got {k!r}")
    a = as_node(a)
    if k == 0:
        return Node(np.ones_like(a.value))
    return Node(
        a.value ** k,
        (a,),
        (lambda g: mul(mul(g, float(k)), pow_int(a, k - 1)),),
    )


# ---------------------------------------------------------------- elementwise

def sin(a):
    a = as_node(a)
    return Node(np.sin(a.value), (a,), (lambda g: mul(g, cos(a)),))


def cos(a):
    a = as_node(a)
    return Node(np.cos(a.value), (a,), (lambda g: neg(mul(g, sin(a))),))


def tanh(a):
    a = as_node(a)
    out = Node(np.tanh(a.value), (a,), ())
    out.vjps = (lambda g: mul(g, sub(1.0, mul(out, out))),)
    return out


def exp(a):
    a = as_node(a)
    out = Node(np.exp(a.value), (a,), ())
    out.vjps = (lambda g: mul(g, out),)
    return out


def log(a):
    a = as_node(a)
    return Node(np.log(a.value), (a,), (lambda g: div(g, a),))


def sqrt(a):
    a = as_node(a)
    out = Node(np.sqrt(a.value), (a,), ())
    out.vjps = (lambda g: div(g, mul(2.0, out)),)
    return out


def abs_(a):
    a = as_node(a)
    sign = Node(np.sign(a.value))  # constant; subgradient 0 at 0
    return Node(np.abs(a.value), (a,), (lambda g: mul(g, sign),))


def relu(a):
    a = as_node(a)
    mask = Node((a.value > 0).astype(np.float64))
    return Node(a.value * mask.value, (a,), (lambda g: mul(g, mask),))


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False):
    a = as_node(a)
    out_val = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return mul(g, Node(np.ones_like(a.value)))
        ax = axis if isinstance(axis, tuple) else (axis,)
        ax = tuple(i % a.value.ndim for i in ax)
        if not keepdims:
            kshape = tuple(1 if i in ax else s for i, s in enumerate(a.value.shape))
            g = reshape(g, kshape)
        return broadcast_to(g, a.value.shape)

    return Node(out_val, (a,), (vjp,))


def mean(a, axis=None, keepdims=False):
    a = as_node(a)
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return div(sum_(a, axis=axis, keepdims=keepdims), float(n))


def broadcast_to(a, shape):
    a = as_node(a)
    return Node(
        np.broadcast_to(a.value, shape).copy(),
        (a,),
        (lambda g: _unbroadcast(g, a.value.shape),),
    )


# ---------------------------------------------------------------- structure

def reshape(a, shape):
    a = as_node(a)
    old = a.value.shape
    return Node(a.value.reshape(shape), (a,), (lambda g: reshape(g, old),))


def matmul(a, b):
    """2-D matrix product."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}")
    return Node(
        a.value @ b.value,
        (a, b),
        (
            lambda g: matmul(g, transpose(b)),
            lambda g: matmul(transpose(a), g),
        ),
    )


def transpose(a):
    a = as_node(a)
    return Node(a.value.T, (a,), (lambda g: transpose(g),))


def take(a, idx):
    """Basic/advanced indexing; gradient scatters back into place."""
    a = as_node(a)
    shape = a.value.shape
    return Node(a.value[idx], (a,), (lambda g: scatter(g, idx, shape),))


def scatter(g, idx, shape):
    """Place ``g`` into zeros of ``shape`` at ``idx`` (adjoint of ``take``)."""
    g = as_node(g)
    out = np.zeros(shape, dtype=np.float64)
    np.add.at(out, idx, g.value)
    return Node(out, (g,), (lambda gg: take(gg, idx),))


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(k):
        sl = [slice(None)] * nodes[k].value.ndim
        sl[axis] = slice(int(offsets[k]), int(offsets[k + 1]))
        sl = tuple(sl)
        return lambda g: take(g, sl)

    return Node(
        np.concatenate([n.value for n in nodes], axis=axis),
        tuple(nodes),
        tuple(make_vjp(k) for k in range(len(nodes))),
    )


def pad_left(a, width, axis=1):
    """Zero-pad ``width`` entries on the left of ``axis``."""
    a = as_node(a)
    if width == 0:
        return a
    shape = list(a.value.shape)
    shape[axis] = width
    return concat([Node(np.zeros(shape)), a], axis=axis)


def gather_along_axis(a, idx, axis):
    """take_along_axis with constant integer indices."""
    a = as_node(a)
    shape = a.value.shape

    def vjp(g):
        g = as_node(g)
        out = np.zeros(shape, dtype=np.float64)
        np.put_along_axis(out, idx, g.value, axis=axis)
        n = Node(out, (g,), (lambda gg: gather_along_axis(gg, idx, axis),))
        return n

    return Node(np.take_along_axis(a.value, idx, axis=axis), (a,), (vjp,))


# ---------------------------------------------------------------- backward

def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, wrt):
    """Gradients of a scalar ``loss`` with respect to each node in ``wrt``.

    Returns gradient Nodes (zero nodes for parameters the loss does not
    reach), accumulated in a fixed topological order so results are
    deterministic.
    """
    loss = as_node(loss)
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _toposort(loss)
    grads = {id(loss): Node(np.ones_like(loss.value))}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else add(acc, pg)
    return [grads.get(id(w), Node(np.zeros_like(w.value))) for w in wrt]


def grad_values(loss, wrt):
    """backward() unwrapped to plain numpy arrays."""
    return [g.value for g in backward(loss, wrt)]
