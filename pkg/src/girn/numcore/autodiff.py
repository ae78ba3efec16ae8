"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the relational model needs are provided.
Every op records its parents and a closure mapping the output gradient to
parent gradients; :func:`backward` walks the tape in reverse topological
order. Nodes whose parents carry no gradient are built as constants, so an
evaluation-mode forward pass never grows a tape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .functional import PROB_FLOOR, softmax as _softmax


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0

    def bw(g):
        return (g * on,)

    return _make(np.where(on, x.data, 0.0), (x,), bw)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - out * out),)

    return _make(out, (x,), bw)


def identity(x) -> Tensor:
    return as_tensor(x)


ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": identity}


# --- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """``np.matmul`` semantics for operands of rank >= 1."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ValueError("matmul needs operands of rank >= 1")

    def bw(g):
        ad, bd = a.data, b.data
        if bd.ndim == 1:
            ga = g[..., None] * bd
            gb = np.tensordot(g, ad, axes=(tuple(range(g.ndim)), tuple(range(ad.ndim - 1))))
            return ga, gb
        if ad.ndim == 1:
            ga = np.matmul(bd, g[..., None])[..., 0]
            gb = ad[:, None] * g[..., None, :]
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), bw)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias`` with weight laid out (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input width {x.shape[-1]} != in_units {weight.shape[1]}")
    parents = [x, weight]
    out = x.data @ weight.data.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ weight.data, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, bw)


def sparse_matmul(matrix: sp.spmatrix, x) -> Tensor:
    """Constant sparse matrix times a dense 2-D tensor."""
    x = as_tensor(x)
    matrix = sp.csr_matrix(matrix)
    mt = matrix.T.tocsr()

    def bw(g):
        return (np.asarray(mt @ g),)

    return _make(np.asarray(matrix @ x.data), (x,), bw)


# --- shape ops -------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(x.data.reshape(shape), (x,), bw)


def swap_last(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        return (np.swapaxes(g, -1, -2),)

    return _make(np.swapaxes(x.data, -1, -2), (x,), bw)


def columns(x, start: int, stop: int) -> Tensor:
    """Column slice ``x[:, start:stop]`` of a 2-D tensor."""
    x = as_tensor(x)

    def bw(g):
        out = np.zeros_like(x.data)
        out[:, start:stop] = g
        return (out,)

    return _make(x.data[:, start:stop], (x,), bw)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(x.data[index], (x,), bw)


def total(x, axis=None) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(x.data.sum(axis=axis), (x,), bw)


# --- probability ops -------------------------------------------------------

def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; masked-out entries get probability 0.

    A slice with every entry masked yields all zeros (and zero gradient).
    """
    x = as_tensor(x)
    p = _softmax(x.data, axis=axis, mask=mask)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (x,), bw)


def weighted_nll(probs, targets, coeffs) -> Tensor:
    """``sum_i coeffs[i] * -log(max(probs[i, targets[i]], floor))`` as a scalar."""
    probs = as_tensor(probs)
    targets = np.asarray(targets, dtype=np.intp)
    coeffs = np.asarray(coeffs, dtype=np.float64)
    rows = np.arange(len(targets))
    picked = probs.data[rows, targets]
    clamped = np.maximum(picked, PROB_FLOOR)
    value = -(coeffs * np.log(clamped)).sum()

    def bw(g):
        out = np.zeros_like(probs.data)
        live = picked > PROB_FLOOR
        out[rows[live], targets[live]] = -g * coeffs[live] / picked[live]
        return (out,)

    return _make(np.array(value), (probs,), bw)


# --- driver ----------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor] | None = None):
    """Reverse sweep from a scalar ``loss``.

    Leaf gradients land in ``tensor.grad``. When ``params`` is a mapping, a
    dict of gradients keyed the same way is returned, with exact zeros for
    parameters the loss never touched.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    if isinstance(params, Mapping):
        return {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}
    return [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in params]
