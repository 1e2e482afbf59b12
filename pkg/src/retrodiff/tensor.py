"""Dense-tensor math with reverse-mode automatic differentiation.

Small numpy-backed tape: each Tensor remembers its parents and a backward
closure. `backward()` walks the graph once in reverse topological order.
Double precision is the default so finite-difference checks are meaningful;
training code passes float32 arrays explicitly.
"""

from __future__ import annotations

import math

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation is used outside its contract."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager: ops inside build no graph (forward-only eval)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Immutable dense array plus an optional gradient slot.

    `data` is always a numpy float array. Tensors built from ops keep
    references to their parents so `backward()` can traverse the graph.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_backward_done", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None,
                 name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        if _GRAD_ENABLED:
            self.requires_grad = bool(requires_grad) or any(
                p.requires_grad for p in _parents)
        else:
            self.requires_grad = False
            _parents = ()
            _backward = None
        self._parents = _parents
        self._backward = _backward
        self._backward_done = False
        self.name = name
        if not np.all(np.isfinite(arr)):
            raise ContractError("tensor contains non-finite values")

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        """Backpropagate from this scalar to every reachable parameter.

        Repeated calls on the same graph are an error: gradients would be
        double-counted. Rebuild the graph (or call again after zero_grad on
        a fresh forward pass) instead.
        """
        if self.data.ndim != 0 and self.data.size != 1:
            raise ContractError("backward() requires a scalar loss")
        if self._backward_done:
            raise ContractError("backward() already called on this graph")
        self._backward_done = True

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None if node._parents else node.grad

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, _parents=(self, other))
        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward = bw
        return out

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, _parents=(self, other))
        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward = bw
        return out

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __truediv__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data / other.data, _parents=(self, other))
        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(
                    -g * self.data / (other.data ** 2), other.shape))
        out._backward = bw
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def square(self):
        return self * self

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), _parents=(self,))
        def bw(g):
            if self.requires_grad:
                self._accumulate(g * 0.5 / out.data)
        out._backward = bw
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), _parents=(self,))
        def bw(g):
            if self.requires_grad:
                self._accumulate(g * out.data)
        out._backward = bw
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), _parents=(self,))
        def bw(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out.data ** 2))
        out._backward = bw
        return out

    # -- reductions and shape ---------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     _parents=(self,))
        def bw(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(np.ascontiguousarray(self.data).reshape(shape),
                     _parents=(self,))
        def bw(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))
        out._backward = bw
        return out

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        out = Tensor(np.transpose(self.data, axes), _parents=(self,))
        def bw(g):
            if self.requires_grad:
                self._accumulate(np.transpose(g, inv))
        out._backward = bw
        return out

    def swap_last(self):
        """Transpose the last two axes (batch dims untouched)."""
        axes = list(range(self.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(*axes)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad, name=name)


# -- core ops --------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))
    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2),
                                       a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g,
                                       b.shape))
    out._backward = bw
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis` (max-subtracted)."""
    x = _as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, _parents=(x,))
    def bw(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate((g - dot) * y)
    out._backward = bw
    return out


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.

    Accepts leading batch axes; q is (..., Lq, d), k is (..., Lk, d),
    v is (..., Lk, dv).
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(
            f"query/key feature dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(
            f"key/value lengths differ: {k.shape} vs {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = matmul(q, k.swap_last()) * scale
    return matmul(softmax(scores, axis=-1), v)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU (smooth, cheap derivative)."""
    x = _as_tensor(x)
    c = math.sqrt(2.0 / math.pi)
    inner = (x + x * x.square() * 0.044715) * c
    return x * 0.5 * (inner.tanh() + 1.0)


def take_rows(table: Tensor, idx) -> Tensor:
    """Gather rows of a 2-D table by integer index (embedding lookup)."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(table.data[idx], _parents=(table,))
    def bw(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            table._accumulate(acc)
    out._backward = bw
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def bw(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(p)
    out._backward = bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = centered.square().mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gain + bias


# -- parameters and optimizer ---------------------------------------------

class ParameterSet:
    """Named registry of trainable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for k, p in self._params.items():
            if k not in arrays:
                raise ContractError(f"missing parameter {k!r} in checkpoint")
            if arrays[k].shape != p.data.shape:
                raise DimensionError(
                    f"parameter {k!r}: shape {arrays[k].shape} != "
                    f"{p.data.shape}")
            p.data = arrays[k].astype(p.data.dtype)


class Adam:
    """Adam with bias correction; state lives per parameter name."""

    def __init__(self, params: ParameterSet, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params}
        self.v = {k: np.zeros_like(p.data) for k, p in params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != param shape {p.data.shape}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        self.params.zero_grad()
