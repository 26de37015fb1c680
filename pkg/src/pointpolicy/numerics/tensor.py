"""Reverse-mode autodiff over dense numpy arrays.

Two precisions are supported: float32 for training speed and float64 for
gradient verification (finite-difference checks are unreliable in float32).
The op set is exactly what the policy model needs; every backward rule is
hand-written and finite-difference checked by the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class DimensionError(ValueError):
    """Raised on shape or precision mismatch between operands."""


class Tensor:
    """A node in the computation graph: dense array plus a gradient slot.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    ``grad`` accumulates across backward calls until explicitly zeroed.
    Non-leaf nodes record their parents and a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "name", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float64)
        if 0 in arr.shape:
            raise DimensionError(f"zero-sized dimension in shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.name = name
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode accumulation from this node.

        Without an explicit seed the node must be scalar. Gradients are
        accumulated into existing slots, so call ``zero_graph_grads`` (or the
        optimizer's ``zero_grads``) between independent passes.
        """
        if grad is None:
            if self.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"seed shape {grad.shape} does not match output shape {self.shape}")
        _accumulate(self, grad)
        for node in reversed(topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar. Python scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_coerce(other, self), -1.0))

    def __rsub__(self, other):
        return add(_coerce(other, self), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        tag = self.name or ("param" if self.requires_grad and not self.parents else "node")
        return f"Tensor({tag}, shape={self.shape}, dtype={self.data.dtype})"


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_dtype(*tensors: Tensor) -> None:
    d0 = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != d0:
            raise DimensionError(f"mixed precisions in one graph: {d0} vs {t.data.dtype}")


def topo_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering, stable for a fixed graph."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def zero_graph_grads(root: Tensor) -> None:
    """Clear gradient slots on every node reachable from ``root``."""
    for node in topo_order(root):
        node.grad = None


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtype(a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad or a.parents:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad or b.parents:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _coerce(b, a)
    _check_dtype(a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad or a.parents:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad or b.parents:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad or a.parents:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad or b.parents:
            _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(data, (a, b), backward)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight + bias, the standard dense layer."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    data = xhat
    if gain is not None:
        _check_dtype(x, gain)
        data = data * gain.data
    if bias is not None:
        _check_dtype(x, bias)
        data = data + bias.data

    parents = tuple(t for t in (x, gain, bias) if t is not None)

    def backward(g):
        gxhat = g * gain.data if gain is not None else g
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        if x.requires_grad or x.parents:
            _accumulate(x, inv * (gxhat - m1 - xhat * m2))
        if gain is not None and (gain.requires_grad or gain.parents):
            _accumulate(gain, _unbroadcast(g * xhat, gain.shape))
        if bias is not None and (bias.requires_grad or bias.parents):
            _accumulate(bias, _unbroadcast(g, bias.shape))

    return _node(data, parents, backward)


def _masked_softmax(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """Row softmax over the last axis; masked-out entries get exactly zero weight."""
    if mask is not None:
        if not mask.any(axis=-1).all():
            raise ValueError("attention mask has a fully masked row; every query needs at least one allowed key")
        logits = np.where(mask, logits, -np.inf)
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(q: np.ndarray, k: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """The softmax(q k^T / sqrt(d)) weights as plain arrays, for inspection and tests."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = (q @ np.swapaxes(k, -1, -2)) * scale
    return _masked_softmax(logits, None if mask is None else np.asarray(mask, dtype=bool))


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with an optional boolean mask (True = allowed).

    The mask shape must broadcast against the (L, L') logits; masked positions
    receive a -inf bias before the softmax and contribute exactly zero weight.
    A fully masked row raises instead of producing NaN.
    """
    _check_dtype(q, k, v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention key width differs: q {q.shape} vs k {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention key/value counts differ: k {k.shape} vs v {v.shape}")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise DimensionError(f"attention leading dims differ: {q.shape}, {k.shape}, {v.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-2:] != (q.shape[-2], k.shape[-2]):
            raise DimensionError(f"mask shape {mask.shape} does not match (L, L')=({q.shape[-2]}, {k.shape[-2]})")

    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    att = _masked_softmax(logits, mask)
    data = att @ v.data

    def backward(g):
        gatt = g @ np.swapaxes(v.data, -1, -2)
        dlogits = att * (gatt - (att * gatt).sum(axis=-1, keepdims=True))
        if q.requires_grad or q.parents:
            _accumulate(q, (dlogits @ k.data) * scale)
        if k.requires_grad or k.parents:
            _accumulate(k, (np.swapaxes(dlogits, -1, -2) @ q.data) * scale)
        if v.requires_grad or v.parents:
            _accumulate(v, np.swapaxes(att, -1, -2) @ g)

    return _node(data, (q, k, v), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    e = erf(x.data * inv_sqrt2)
    data = 0.5 * x.data * (1.0 + e)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        _accumulate(x, g * (0.5 * (1.0 + e) + x.data * pdf))

    return _node(data.astype(x.data.dtype), (x,), backward)


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * sig

    def backward(g):
        _accumulate(x, g * sig * (1.0 + x.data * (1.0 - sig)))

    return _node(data, (x,), backward)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        _accumulate(x, _spread(g, x.shape, axis, keepdims))

    return _node(data, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size // max(data.size, 1)

    def backward(g):
        _accumulate(x, _spread(g, x.shape, axis, keepdims) / count)

    return _node(data, (x,), backward)


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).astype(g.dtype, copy=False)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    _check_dtype(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad or t.parents:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + s)
                _accumulate(t, g[tuple(sl)])
            start += s

    return _node(data, tuple(tensors), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = x.data.reshape(shape)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(data, (x,), backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    data = np.swapaxes(x.data, a, b)

    def backward(g):
        _accumulate(x, np.swapaxes(g, a, b))

    return _node(data, (x,), backward)


def take(x: Tensor, idx) -> Tensor:
    """Basic indexing (ints, slices, tuples thereof) with scatter-add backward."""
    data = np.array(x.data[idx])

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    return _node(data, (x,), backward)


def embedding(table: Tensor, idx) -> Tensor:
    """Row lookup into a (num_entries, dim) table; gradients scatter-add into rows."""
    indices = np.asarray(idx, dtype=np.intp)
    data = table.data[indices]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices, g)
        _accumulate(table, gt)

    return _node(data, (table,), backward)


def square(x: Tensor) -> Tensor:
    return mul(x, x)


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements."""
    diff = a - b
    return mean(mul(diff, diff))
