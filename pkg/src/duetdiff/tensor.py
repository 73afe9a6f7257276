"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

All values are 64-bit floats in row-major numpy arrays. Gradients are
recorded on a global tape that is rebuilt per forward pass and consumed
(and cleared) by ``backward``. Reduction order inside sums and matmuls is
fixed by the underlying BLAS for a given thread count, which keeps repeat
runs bit-identical.
"""

from __future__ import annotations

import logging

import numpy as np

_logger = logging.getLogger(__name__)

_GRAD_ENABLED = True


class Node:
    """One tape entry: an op output, its parents, and the local backward."""

    __slots__ = ("out", "parents", "backward_fn")

    def __init__(self, out, parents, backward_fn):
        self.out = out
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def append(self, node):
        self.nodes.append(node)
        return len(self.nodes) - 1


_TAPE = Tape()


def clear_tape():
    """Drop all recorded nodes. Called automatically by ``backward``."""
    _TAPE.nodes.clear()


def tape_size():
    return len(_TAPE.nodes)


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """Dense float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "tape_node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape_node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, backward_fn):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.tape_node = _TAPE.append(Node(out, parents, backward_fn))
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _record(out, (a, b), bwd)


def scale(a, c):
    a = _wrap(a)
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record(out, (a,), bwd)


def matmul(a, b):
    """Matrix product; batched on leading axes via numpy matmul semantics."""
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul: operands must be at least 2-D, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul: inner dimensions differ for shapes {a.data.shape} and {b.data.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------- structure


def gather_rows(table, ids):
    """Embedding lookup: rows of a 2-D table selected by an int array."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ValueError(f"gather_rows: table must be 2-D, got {table.data.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"gather_rows: id out of range [0, {table.data.shape[0]}) in lookup"
        )
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _record(out, (table,), bwd)


def concat(parts, axis):
    parts = [_wrap(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _record(out, tuple(parts), bwd)


def slice_axis(t, axis, start, stop):
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(t.data[idx])

    def bwd(g):
        gt = np.zeros_like(t.data)
        gt[idx] = g
        return (gt,)

    return _record(out, (t,), bwd)


def reshape(t, shape):
    out = Tensor(t.data.reshape(shape))

    def bwd(g):
        return (g.reshape(t.data.shape),)

    return _record(out, (t,), bwd)


def transpose(t, axes):
    axes = tuple(axes)
    out = Tensor(np.transpose(t.data, axes))
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (t,), bwd)


# ---------------------------------------------------------------- nonlinear


def softmax(t, axis=-1):
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def bwd(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _record(out, (t,), bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(t):
    x = t.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + th))

    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner
        return (g * d,)

    return _record(out, (t,), bwd)


def sigmoid_clamped(t, limit=30.0):
    """Sigmoid with the input clamped to [-limit, limit] before the exp."""
    x = np.clip(t.data, -limit, limit)
    y = 1.0 / (1.0 + np.exp(-x))
    active = (t.data > -limit) & (t.data < limit)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y) * active,)

    return _record(out, (t,), bwd)


def log(t):
    out = Tensor(np.log(t.data))

    def bwd(g):
        return (g / t.data,)

    return _record(out, (t,), bwd)


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    n = x.data.shape[-1]

    def bwd(g):
        gg = _unbroadcast(g * xhat, gamma.data.shape)
        gb = _unbroadcast(g, beta.data.shape)
        gx_hat = g * gamma.data
        gx = (
            inv
            / n
            * (
                n * gx_hat
                - gx_hat.sum(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True)
            )
        )
        return gx, gg, gb

    return _record(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------- reductions


def sum_axis(t, axis, keepdims=False):
    out = Tensor(t.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape).copy(),)

    return _record(out, (t,), bwd)


def mean_axis(t, axis, keepdims=False):
    n = t.data.shape[axis]
    return scale(sum_axis(t, axis, keepdims), 1.0 / n)


def weighted_sum(t, weights):
    """Scalar sum(t * weights) with constant weights."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != t.data.shape:
        raise ValueError(
            f"weighted_sum: weight shape {w.shape} does not match tensor {t.data.shape}"
        )
    out = Tensor((t.data * w).sum())

    def bwd(g):
        return (g * w,)

    return _record(out, (t,), bwd)


def weighted_nll(logits, targets, weights):
    """Weighted-sum negative log-likelihood: sum(w * -log softmax[target]).

    Positions with zero weight are inert; their target ids are ignored
    apart from range checks.
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.shape != logits.data.shape[:-1] or weights.shape != targets.shape:
        raise ValueError(
            f"weighted_nll: shapes disagree, logits {logits.data.shape}, "
            f"targets {targets.shape}, weights {weights.shape}"
        )
    k = logits.data.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"weighted_nll: target id outside [0, {k})")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    tflat = targets.reshape(-1)
    picked = logp.reshape(-1, k)[np.arange(tflat.size), tflat].reshape(targets.shape)
    out = Tensor(-(picked * weights).sum())

    def bwd(g):
        p = np.exp(logp)
        grad = p.copy()
        grad.reshape(-1, k)[np.arange(tflat.size), tflat] -= 1.0
        grad *= weights[..., None]
        return (grad * g,)

    return _record(out, (logits,), bwd)


def softmax_cross_entropy(logits, targets, active=None):
    """Mean negative log-likelihood over active positions.

    ``logits`` has vocabulary on the last axis; ``targets`` holds int ids of
    the remaining shape; ``active`` is an optional bool mask of that shape.
    With no active positions the loss is defined as zero with zero gradient.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ValueError(
            f"softmax_cross_entropy: target shape {targets.shape} does not match "
            f"logits {logits.data.shape}"
        )
    k = logits.data.shape[-1]
    if active is None:
        active = np.ones(targets.shape, dtype=bool)
    else:
        active = np.asarray(active, dtype=bool)
    if active.any() and (targets[active].min() < 0 or targets[active].max() >= k):
        raise ValueError(f"softmax_cross_entropy: target id outside [0, {k})")

    n_active = int(active.sum())
    if n_active == 0:
        _logger.info("softmax_cross_entropy: no active positions, defined-zero loss")
        out = Tensor(0.0)

        def bwd_zero(g):
            return (np.zeros_like(logits.data),)

        return _record(out, (logits,), bwd_zero)

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    tflat = targets.reshape(-1)
    picked = logp.reshape(-1, k)[np.arange(tflat.size), tflat].reshape(targets.shape)
    loss = -(picked * active).sum() / n_active
    out = Tensor(loss)

    def bwd(g):
        p = np.exp(logp)
        grad = p.copy()
        grad.reshape(-1, k)[np.arange(tflat.size), tflat] -= 1.0
        grad *= (active / n_active)[..., None]
        return (grad * g,)

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------- backward


def backward(loss, clear=True):
    """Reverse-mode accumulation from a scalar loss into leaf ``.grad``s.

    Gradients of tensors not on the path stay ``None``; leaves accumulate
    (``+=``) so gradient accumulation across calls works. The tape is
    cleared afterwards unless ``clear`` is False.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if loss.tape_node is None:
        if clear:
            clear_tape()
        return
    adjoint = {id(loss): np.ones_like(loss.data)}
    nodes = _TAPE.nodes
    for i in range(loss.tape_node, -1, -1):
        node = nodes[i]
        g = adjoint.pop(id(node.out), None)
        if g is None:
            continue
        contribs = node.backward_fn(g)
        for parent, pg in zip(node.parents, contribs):
            if pg is None or not parent.requires_grad:
                continue
            if parent.tape_node is None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += pg
            else:
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg
    if clear:
        clear_tape()
