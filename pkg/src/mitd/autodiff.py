"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Only the operations the transducer needs are provided. Every op records its
parents and a closure mapping the output gradient to parent gradients;
:meth:`Tensor.backward` walks the graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")
    # make ndarray <op> Tensor defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __rmatmul__(self, other):
        return matmul(_wrap(other), self)

    def __getitem__(self, index):
        return getitem(self, index)

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents)
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)}
        # arrays in ``owned`` were allocated here and may be accumulated in place;
        # others can alias arrays handed to several parents
        owned = set()
        for node in reversed(order):
            key = id(node)
            g = grads.pop(key, None)
            owned.discard(key)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pkey = id(parent)
                if pkey not in grads:
                    grads[pkey] = pg
                elif pkey in owned:
                    grads[pkey] += pg
                else:
                    grads[pkey] = grads[pkey] + pg
                    owned.add(pkey)


def leaf(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def constant(value) -> Tensor:
    return Tensor(value)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for ``a`` of any rank >= 1 and a 2-D ``b``."""
    def backward(g):
        ga = g @ b.value.T
        gb = a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb
    return Tensor(a.value @ b.value, (a, b), backward)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every index must occur in at least two of the three terms."""
    ins, out = spec.split("->")
    sa, sb = ins.split(",")

    def backward(g):
        return (np.einsum(f"{out},{sb}->{sa}", g, b.value),
                np.einsum(f"{out},{sa}->{sb}", g, a.value))
    return Tensor(np.einsum(spec, a.value, b.value), (a, b), backward)


def attention_scores(g: Tensor, K: Tensor) -> Tensor:
    """``scores[b, l] = K[b, l] . g[b]``."""
    def backward(G):
        return (np.matmul(G[:, None, :], K.value)[:, 0], G[:, :, None] * g.value[:, None, :])
    return Tensor(np.matmul(K.value, g.value[:, :, None])[:, :, 0], (g, K), backward)


def attention_context(alpha: Tensor, S: Tensor) -> Tensor:
    """``context[b] = sum_l alpha[b, l] S[b, l]``."""
    def backward(G):
        return (np.matmul(S.value, G[:, :, None])[:, :, 0], alpha.value[:, :, None] * G[:, None, :])
    return Tensor(np.matmul(alpha.value[:, None, :], S.value)[:, 0], (alpha, S), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.value)
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


def concat(parts, axis=-1) -> Tensor:
    parts = [_wrap(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), backward)


def stack(parts, axis=1) -> Tensor:
    parts = [_wrap(p) for p in parts]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))
    return Tensor(np.stack([p.value for p in parts], axis=axis), tuple(parts), backward)


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        out = np.zeros_like(a.value)
        out[index] += g
        return (out,)
    return Tensor(a.value[index], (a,), backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids)

    def backward(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (out,)
    return Tensor(table.value[ids], (table,), backward)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` is true."""
    p = _masked_softmax(scores.value, mask)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)
    return Tensor(p, (scores,), backward)


def log_softmax(logits: Tensor) -> Tensor:
    out = _log_softmax(logits.value)
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)
    return Tensor(out, (logits,), backward)


def pick(a: Tensor, ids: np.ndarray) -> Tensor:
    """``a[i, ids[i]]`` for a 2-D ``a``."""
    rows = np.arange(a.shape[0])

    def backward(g):
        out = np.zeros_like(a.value)
        out[rows, ids] = g
        return (out,)
    return Tensor(a.value[rows, ids], (a,), backward)


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar ``sum(a * weights)`` with constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    return Tensor(np.sum(a.value * w), (a,), lambda g: (g * w,))


# Plain numpy kernels shared with the gradient-free inference path.

_sigmoid = expit


def _masked_softmax(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    x = np.where(mask, x, -np.inf)
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class NumpyOps:
    """Same op names as this module, on raw arrays, for inference."""

    sigmoid = staticmethod(_sigmoid)
    tanh = staticmethod(np.tanh)
    log_softmax = staticmethod(_log_softmax)
    masked_softmax = staticmethod(_masked_softmax)

    @staticmethod
    def concat(parts, axis=-1):
        return np.concatenate(parts, axis=axis)

    @staticmethod
    def attention_scores(g, K):
        return np.matmul(K, g[:, :, None])[:, :, 0]

    @staticmethod
    def attention_context(alpha, S):
        return np.matmul(alpha[:, None, :], S)[:, 0]

    @staticmethod
    def stack(parts, axis=1):
        return np.stack(parts, axis=axis)

    @staticmethod
    def einsum(spec, a, b):
        return np.einsum(spec, a, b)

    @staticmethod
    def embed(table, ids):
        return table[ids]

    @staticmethod
    def pick(a, ids):
        return a[np.arange(a.shape[0]), ids]

    @staticmethod
    def weighted_sum(a, weights):
        return np.sum(a * weights)


class TensorOps:
    sigmoid = staticmethod(sigmoid)
    tanh = staticmethod(tanh)
    log_softmax = staticmethod(log_softmax)
    masked_softmax = staticmethod(masked_softmax)
    concat = staticmethod(concat)
    stack = staticmethod(stack)
    einsum = staticmethod(einsum)
    attention_scores = staticmethod(attention_scores)
    attention_context = staticmethod(attention_context)
    embed = staticmethod(embed)
    pick = staticmethod(pick)
    weighted_sum = staticmethod(weighted_sum)
