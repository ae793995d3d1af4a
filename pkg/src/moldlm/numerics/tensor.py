"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records a closure-based tape. Calling
``backward`` on a scalar loss walks the tape in reverse topological order
and accumulates gradients into every reachable tensor with
``requires_grad=True``. Double precision is the default dtype; single
precision is supported for training runs.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "concat",
    "stack",
    "softmax",
    "log_softmax",
    "layer_norm",
    "scaled_dot_attention",
    "cross_entropy",
    "minimum",
    "softplus",
    "backward",
]

_GRAD_ENABLED = True

# Sentinel stored in _backward once a graph has been consumed by backward().
_CONSUMED = object()


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

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
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_grad_alias")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self._grad_alias = False

    # -- construction -----------------------------------------------------

    @staticmethod
    def _op(data: np.ndarray, parents, backward_fn) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._backward = None
        out._parents = ()
        out.requires_grad = False
        out._grad_alias = False
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    # -- basic properties --------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        # First contribution aliases the producer's buffer (never mutated
        # after its node fires); later ones materialize a private copy.
        if self.grad is None:
            self.grad = g
            self._grad_alias = True
        elif self._grad_alias:
            self.grad = self.grad + g
            self._grad_alias = False
        else:
            self.grad += g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._op(data, (self, other), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data - other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._op(data, (self, other), bwd)

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) - self

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._op(data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / float(other))

    def __rtruediv__(self, other):
        return _as_tensor(other, self.dtype) * self ** -1.0

    def __pow__(self, p: float):
        p = float(p)
        data = self.data ** p

        def bwd(g):
            self._accumulate(g * p * self.data ** (p - 1.0))

        return Tensor._op(data, (self,), bwd)

    def __matmul__(self, other):
        other = _as_tensor(other, self.dtype)
        data = self.data @ other.data
        a, b = self.data, other.data

        def bwd(g):
            if self.requires_grad:
                if b.ndim == 1:
                    ga = np.outer(g, b) if a.ndim == 2 else g[..., None] * b
                else:
                    ga = g @ np.swapaxes(b, -1, -2)
                self._accumulate(_unbroadcast(ga, a.shape))
            if other.requires_grad:
                if a.ndim == 1:
                    gb = np.outer(a, g)
                else:
                    gb = np.swapaxes(a, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, b.shape))

        return Tensor._op(data, (self, other), bwd)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * data)

        return Tensor._op(data, (self,), bwd)

    def log(self):
        data = np.log(self.data)

        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor._op(data, (self,), bwd)

    def tanh(self):
        data = np.tanh(self.data)

        def bwd(g):
            self._accumulate(g * (1.0 - data * data))

        return Tensor._op(data, (self,), bwd)

    def relu(self):
        data = np.maximum(self.data, 0.0)

        def bwd(g):
            self._accumulate(g * (self.data > 0))

        return Tensor._op(data, (self,), bwd)

    def sigmoid(self):
        x = self.data
        data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def bwd(g):
            self._accumulate(g * data * (1.0 - data))

        return Tensor._op(data, (self,), bwd)

    def abs(self):
        data = np.abs(self.data)

        def bwd(g):
            self._accumulate(g * np.sign(self.data))

        return Tensor._op(data, (self,), bwd)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self._accumulate(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._op(data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape manipulation ----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)

        def bwd(g):
            self._accumulate(g.reshape(old))

        return Tensor._op(data, (self,), bwd)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        data = self.data.transpose(axes)

        def bwd(g):
            self._accumulate(g.transpose(inv))

        return Tensor._op(data, (self,), bwd)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        data = self.data[idx]

        def bwd(g):
            buf = np.zeros_like(self.data)
            _index_add(buf, idx, g)
            self._accumulate(buf)

        return Tensor._op(data, (self,), bwd)

    def take_rows(self, indices):
        """Gather rows along axis 0; indices may be any integer array."""
        idx = np.asarray(indices)
        data = self.data[idx]

        def bwd(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, idx, g)
            self._accumulate(buf)

        return Tensor._op(data, (self,), bwd)

    # -- autograd ----------------------------------------------------------------

    def backward(self):
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _index_add(buf: np.ndarray, idx, g) -> None:
    """buf[idx] += g, unbuffered when idx may contain duplicate positions."""
    if isinstance(idx, tuple):
        fancy = any(isinstance(i, (np.ndarray, list)) for i in idx)
    else:
        fancy = isinstance(idx, (np.ndarray, list))
    if fancy:
        np.add.at(buf, idx, g)
    else:
        buf[idx] += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the recorded graph.

    The graph is single-use: closures are released as they fire, so a second
    call on the same loss raises.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._backward is _CONSUMED:
        raise RuntimeError("computation graph already consumed by a previous backward()")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    visiting: list[tuple[Tensor, bool]] = [(loss, False)]
    seen: set[int] = set()
    while visiting:
        node, processed = visiting.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        visiting.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                visiting.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        fn = node._backward
        if fn is not None and fn is not _CONSUMED:
            fn(node.grad)
        # release the tape as we go; keep leaf gradients
        if node._parents:
            node._backward = _CONSUMED
            node._parents = ()
            node.grad = None
    loss._backward = _CONSUMED


# -- free functions -------------------------------------------------------------


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor._op(data, tensors, bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor._op(data, tensors, bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        x._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor._op(y, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bwd(g):
        x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return Tensor._op(out, (x,), bwd)


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = scale.data * xhat + shift.data
    d = x.data.shape[-1]

    def bwd(g):
        if scale.requires_grad:
            scale._accumulate(_unbroadcast(g * xhat, scale.data.shape))
        if shift.requires_grad:
            shift._accumulate(_unbroadcast(g, shift.data.shape))
        if x.requires_grad:
            gx = g * scale.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(term * inv)

    return Tensor._op(out, (x, scale, shift), bwd)


# Large negative finite stand-in for -inf: exp(x - max) underflows to exactly 0,
# keeping every forward value finite.
MASKED_SCORE = -1e30


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """softmax(q kᵀ / sqrt(d_k)) v with optional boolean key masking.

    ``mask`` is a boolean ndarray broadcastable to the score matrix
    (..., n_q, n_k); True hides a key (its weight becomes exactly zero).
    Leading batch/head axes are supported through numpy matmul broadcasting.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value count mismatch: {k.shape} vs {v.shape}")
    d_k = q.shape[-1]
    # scale folded into q: cheaper than scaling the (n_q, n_k) score matrix
    scores = (q * (1.0 / np.sqrt(d_k))) @ k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        bias = np.where(mask, MASKED_SCORE, 0.0).astype(scores.dtype)
        scores = scores + Tensor(bias)
    weights = softmax(scores, axis=-1)
    return weights @ v


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted token-level negative log-likelihood.

    logits has shape (positions, V); targets is an integer sequence of the
    same length. Returns sum_i weights_i * (-log softmax(logits_i)[targets_i]).
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} != ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ValueError("target index out of vocabulary")
    if weights is None:
        w = np.ones(n, dtype=logits.dtype)
    else:
        w = np.asarray(weights, dtype=logits.dtype)
    lp = log_softmax(logits, axis=-1)
    picked = lp[np.arange(n), targets]
    return (picked * Tensor(-w)).sum()


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b in one tape node (w is 2D, x has any leading axes)."""
    data = x.data @ w.data
    if b is not None:
        data = data + b.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            if x.data.ndim == 2:
                w._accumulate(x.data.T @ g)
            else:
                d_in, d_out = w.data.shape
                w._accumulate(x.data.reshape(-1, d_in).T @ g.reshape(-1, d_out))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=tuple(range(g.ndim - 1))))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._op(data, parents, bwd)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise minimum with subgradient routed to the smaller operand (ties -> a)."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    take_a = a.data <= b.data
    data = np.where(take_a, a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._op(data, (a, b), bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g):
        s = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                     np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
        x._accumulate(g * s)

    return Tensor._op(data, (x,), bwd)
