"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Every op produces a :class:`Tensor` node that remembers its parents and a
closure mapping the output gradient to per-parent gradients.  Calling
:meth:`Tensor.backward` on a scalar walks the graph in reverse topological
order and accumulates into the ``grad`` slot of every leaf created with
``requires_grad=True``.  The graph is released afterwards, so a second
``backward`` without a fresh forward pass raises.

Only the handful of ops needed by the encoders and agent heads are provided:
conv1d, max pooling, pointwise activations, dense layers, cosine similarity,
row softmax and an LSTM built from primitives.
"""
from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class GraphError(RuntimeError):
    """Raised when backward is called on a node with no usable graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_released")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data) if requires_grad and op == "leaf" else None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.op = op
        self._released = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self.op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.is_leaf and self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # arithmetic sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return total(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self):
        """Backpropagate from this scalar node into all parameter leaves."""
        if self.data.size != 1:
            raise GraphError("backward requires a scalar output")
        if not self.requires_grad:
            raise GraphError("backward on a detached node (no parameter in its history)")
        if self._released:
            raise GraphError("graph already consumed by a previous backward; run forward again")
        if self.is_leaf:
            self.grad = self.grad + np.ones_like(self.data)
            return

        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if not node.is_leaf:
                node._backward = None
                node._parents = ()
                node._released = True


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._released:
            raise GraphError("graph already consumed by a previous backward; run forward again")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires, op=op)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)),
                 "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def total(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.sum(), (a,), lambda g: (np.full_like(a.data, g),), "sum")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable in both tails
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(a, fn: str) -> Tensor:
    try:
        return _ACTIVATIONS[fn](a)
    except KeyError:
        raise ValueError(f"unknown activation {fn!r}; expected one of {sorted(_ACTIVATIONS)}") from None


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward, "getitem")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return _node(np.stack([t.data for t in tensors]), tensors,
                 lambda g: tuple(g[i] for i in range(len(tensors))), "stack")


def mean_rows(a) -> Tensor:
    """Mean over the leading axis."""
    a = as_tensor(a)
    n = a.shape[0]
    return _node(a.data.mean(axis=0), (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),), "mean_rows")


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return _node(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),), "softmax")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def conv1d(x, kernels, bias) -> Tensor:
    """Valid 1-D convolution: x (T, Cin), kernels (K, Cin, Cout), bias (Cout,)."""
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    if x.data.ndim != 2 or kernels.data.ndim != 3 or bias.data.ndim != 1:
        raise ValueError("conv1d expects input (T, Cin), kernels (K, Cin, Cout), bias (Cout,)")
    T, cin = x.shape
    K, kcin, cout = kernels.shape
    if kcin != cin or bias.shape[0] != cout:
        raise ValueError(f"conv1d shape mismatch: input {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    if T < K:
        raise ValueError(f"conv1d needs at least {K} frames, got {T}; pad the input")
    t_out = T - K + 1
    # (t_out, Cin, K) -> (t_out, K, Cin) -> (t_out, K*Cin)
    cols = sliding_window_view(x.data, K, axis=0).transpose(0, 2, 1).reshape(t_out, K * cin)
    wmat = kernels.data.reshape(K * cin, cout)
    out = cols @ wmat + bias.data

    def backward(g):
        gcols = (g @ wmat.T).reshape(t_out, K, cin)
        gx = np.zeros_like(x.data)
        for j in range(K):
            gx[j:j + t_out] += gcols[:, j, :]
        return gx, (cols.T @ g).reshape(K, cin, cout), g.sum(axis=0)

    return _node(out, (x, kernels, bias), backward, "conv1d")


def maxpool1d(x, window: int) -> Tensor:
    """Non-overlapping max over time; trailing T % window frames are dropped."""
    x = as_tensor(x)
    if window < 1:
        raise ValueError("pool window must be >= 1")
    T, C = x.shape
    if T < window:
        raise ValueError(f"maxpool1d needs at least {window} frames, got {T}")
    n = T // window
    blocks = x.data[:n * window].reshape(n, window, C)
    # argmax returns the first maximum: ties go to the lowest time index
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]
    rows = arg + (np.arange(n) * window)[:, None]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, np.broadcast_to(np.arange(C), rows.shape)), g)
        return (gx,)

    return _node(out, (x,), backward, "maxpool1d")


def global_maxpool(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ValueError("global_maxpool needs a non-empty (T, C) input")
    arg = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[arg, cols] = g
        return (gx,)

    return _node(x.data[arg, cols], (x,), backward, "global_maxpool")


def dense(x, weights, bias) -> Tensor:
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.shape[-1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ValueError(f"dense shape mismatch: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    return add(matmul(x, weights), bias)


def cosine(a, b) -> Tensor:
    """Normalized dot product of two vectors, clipped to [-1, 1]."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.data.ndim != 1:
        raise ValueError(f"cosine needs two vectors of equal length, got {a.shape} and {b.shape}")
    na = float(np.sqrt(a.data @ a.data))
    nb = float(np.sqrt(b.data @ b.data))
    if na == 0.0 or nb == 0.0:
        raise ZeroDivisionError("cosine of a zero-norm vector (degenerate encoding)")
    c = float(a.data @ b.data) / (na * nb)

    def backward(g):
        return (g * (b.data / (na * nb) - c * a.data / (na * na)),
                g * (a.data / (na * nb) - c * b.data / (nb * nb)))

    return _node(min(1.0, max(-1.0, c)), (a, b), backward, "cosine")


def lstm_sequence(x, wx, wh, b) -> Tensor:
    """Run an LSTM over x (T, C) from zero state and return the last hidden state.

    Gate layout in the 4H axis: input, forget, output, candidate.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ValueError("lstm_sequence needs a non-empty (T, C) input")
    H = wh.shape[0]
    if wx.shape != (x.shape[1], 4 * H) or wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(f"lstm shape mismatch: input {x.shape}, wx {wx.shape}, wh {wh.shape}, b {b.shape}")
    xw = add(matmul(x, wx), b)
    h = c = None
    for t in range(x.shape[0]):
        z = xw[t] if h is None else add(xw[t], matmul(h, wh))
        i = sigmoid(z[0:H])
        f = sigmoid(z[H:2 * H])
        o = sigmoid(z[2 * H:3 * H])
        cand = tanh(z[3 * H:])
        c = mul(i, cand) if c is None else add(mul(f, c), mul(i, cand))
        h = mul(o, tanh(c))
    return h
