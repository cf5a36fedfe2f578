"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and, when produced by an op, keeps the op
context so ``backward`` can replay the tape.  Every op validates that
its forward output is finite; a NaN/Inf anywhere raises immediately
instead of propagating.
"""

from __future__ import annotations

import math

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass produces NaN or Inf values."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor holds non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._ctx: _Op | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # Operator sugar; constants are promoted to plain Tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def backward(self):
        backward(self)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class _Op:
    """Base op: subclasses define forward(...) -> array and backward(grad)."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs) -> Tensor:
        ctx = cls(*tensors)
        out_data = ctx.forward(*[t.data for t in tensors], **kwargs)
        if not np.all(np.isfinite(out_data)):
            raise NonFiniteError(f"{cls.__name__} produced non-finite values")
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.grad = None
        out.requires_grad = any(t.requires_grad for t in tensors)
        out._ctx = ctx if out.requires_grad else None
        return out

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad: np.ndarray):
        raise NotImplementedError


def backward(loss: Tensor):
    """Accumulate d(loss)/d(t) into .grad of every reachable tensor.

    The loss must be a scalar produced by a recorded computation.  The
    graph is released afterwards, so a second backward on the same
    tensors raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if loss._ctx is None:
        raise ValueError("backward on a detached or constant value")

    # Iterative topological order over the tape.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.requires_grad and node._ctx is None:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        ctx = node._ctx
        parent_grads = ctx.backward(grad)
        if not isinstance(parent_grads, tuple):
            parent_grads = (parent_grads,)
        for parent, pgrad in zip(ctx.parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pgrad
            else:
                grads[id(parent)] = pgrad
        node._ctx = None  # graph is consumed


class _Add(_Op):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.sa), _unbroadcast(grad, self.sb)


class _Sub(_Op):
    def forward(self, a, b):
        self.sa, self.sb = a.shape, b.shape
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.sa), _unbroadcast(-grad, self.sb)


class _Mul(_Op):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class _Div(_Op):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / self.b**2
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class _Neg(_Op):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class _MatMul(_Op):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.a, self.b
        if a.ndim == 1 or b.ndim == 1:
            raise ValueError("matmul operands must be at least 2-D")
        ga = grad @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ grad
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


class _Reshape(_Op):
    def forward(self, a, shape=None):
        self.orig = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.orig),)


class _Sum(_Op):
    def forward(self, a, axis=None, keepdims=False):
        self.orig = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return a.sum(axis=axis, keepdims=keepdims)

    def backward(self, grad):
        if self.axis is None:
            return (np.broadcast_to(grad, self.orig).copy(),)
        if not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            for ax in sorted(a % len(self.orig) for a in axes):
                grad = np.expand_dims(grad, ax)
        return (np.broadcast_to(grad, self.orig).copy(),)


class _Relu(_Op):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class _Sigmoid(_Op):
    def forward(self, a):
        self.out = 1.0 / (1.0 + np.exp(-a))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class _Exp(_Op):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class _Log(_Op):
    def forward(self, a):
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class _PowConst(_Op):
    def forward(self, a, exponent=2.0):
        self.a = a
        self.exponent = exponent
        return a**exponent

    def backward(self, grad):
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class _Softmax(_Op):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        inner = (grad * s).sum(axis=self.axis, keepdims=True)
        return (s * (grad - inner),)


class _Clip(_Op):
    def forward(self, a, lo=None, hi=None):
        self.mask = np.ones_like(a, dtype=bool)
        if lo is not None:
            self.mask &= a >= lo
        if hi is not None:
            self.mask &= a <= hi
        return np.clip(a, lo, hi)

    def backward(self, grad):
        return (grad * self.mask,)


class _WrapToPi(_Op):
    """Wrap angles to (-pi, pi]; derivative 1 almost everywhere."""

    def forward(self, a):
        wrapped = np.mod(a + math.pi, 2.0 * math.pi) - math.pi
        wrapped = np.where(wrapped == -math.pi, math.pi, wrapped)
        return wrapped

    def backward(self, grad):
        return (grad,)


class _SmoothL1(_Op):
    """Elementwise smooth-L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""

    def forward(self, a):
        self.a = a
        small = np.abs(a) < 1.0
        return np.where(small, 0.5 * a * a, np.abs(a) - 0.5)

    def backward(self, grad):
        small = np.abs(self.a) < 1.0
        return (grad * np.where(small, self.a, np.sign(self.a)),)


class _TakeRows(_Op):
    def forward(self, a, indices=None):
        self.indices = np.asarray(indices, dtype=int)
        self.orig = a.shape
        return a[self.indices]

    def backward(self, grad):
        out = np.zeros(self.orig)
        np.add.at(out, self.indices, grad)
        return (out,)


class _BilinearSample(_Op):
    """Sample a (C, H, W) grid at continuous (u, v) points -> (P, C).

    Coordinates follow the cell-center convention (centers at integer +
    0.5) and are clamped to the border band [0.5, dim - 0.5] before
    interpolation, so out-of-grid samples take border values and stay
    differentiable w.r.t. the grid.
    """

    def forward(self, grid, points=None):
        c, h, w = grid.shape
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        self.grid_shape = grid.shape
        if len(pts) == 0:
            self.empty = True
            return np.zeros((0, c))
        self.empty = False

        u = np.clip(pts[:, 0], 0.5, w - 0.5) - 0.5
        v = np.clip(pts[:, 1], 0.5, h - 0.5) - 0.5
        u0 = np.minimum(np.floor(u), w - 2.0).astype(int) if w > 1 else np.zeros(len(u), dtype=int)
        v0 = np.minimum(np.floor(v), h - 2.0).astype(int) if h > 1 else np.zeros(len(v), dtype=int)
        fu = u - u0
        fv = v - v0
        u1 = np.minimum(u0 + 1, w - 1)
        v1 = np.minimum(v0 + 1, h - 1)

        self.idx = (v0, v1, u0, u1)
        self.wgt = (
            (1.0 - fu) * (1.0 - fv),
            fu * (1.0 - fv),
            (1.0 - fu) * fv,
            fu * fv,
        )
        w00, w10, w01, w11 = self.wgt
        out = (
            grid[:, v0, u0] * w00
            + grid[:, v0, u1] * w10
            + grid[:, v1, u0] * w01
            + grid[:, v1, u1] * w11
        )
        return out.T  # (P, C)

    def backward(self, grad):
        out = np.zeros(self.grid_shape)
        if self.empty:
            return (out,)
        v0, v1, u0, u1 = self.idx
        w00, w10, w01, w11 = self.wgt
        g = grad.T  # (C, P)
        np.add.at(out, (slice(None), v0, u0), g * w00)
        np.add.at(out, (slice(None), v0, u1), g * w10)
        np.add.at(out, (slice(None), v1, u0), g * w01)
        np.add.at(out, (slice(None), v1, u1), g * w11)
        return (out,)


# Functional wrappers ------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    return _Add.apply(a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _Sub.apply(a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _Mul.apply(a, b)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _Div.apply(a, b)


def neg(a: Tensor) -> Tensor:
    return _Neg.apply(a)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return _MatMul.apply(a, b)


def reshape(a: Tensor, shape) -> Tensor:
    return _Reshape.apply(a, shape=tuple(shape))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _Sum.apply(a, axis=axis, keepdims=keepdims)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / float(count)))


def relu(a: Tensor) -> Tensor:
    return _Relu.apply(a)


def sigmoid(a: Tensor) -> Tensor:
    return _Sigmoid.apply(a)


def exp(a: Tensor) -> Tensor:
    return _Exp.apply(a)


def log(a: Tensor) -> Tensor:
    return _Log.apply(a)


def power(a: Tensor, exponent: float) -> Tensor:
    return _PowConst.apply(a, exponent=exponent)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return _Softmax.apply(a, axis=axis)


def clip(a: Tensor, lo=None, hi=None) -> Tensor:
    return _Clip.apply(a, lo=lo, hi=hi)


def wrap_to_pi(a: Tensor) -> Tensor:
    return _WrapToPi.apply(a)


def smooth_l1(a: Tensor) -> Tensor:
    return _SmoothL1.apply(a)


def take_rows(a: Tensor, indices) -> Tensor:
    return _TakeRows.apply(a, indices=indices)


def bilinear_sample(grid: Tensor, points) -> Tensor:
    """Bilinear interpolation of a (C, H, W) grid at (u, v) points.

    Points outside the valid band are border-clamped; an empty point
    list yields an empty (0, C) result.
    """
    if grid.data.ndim != 3:
        raise ValueError(f"expected a (C, H, W) grid, got shape {grid.data.shape}")
    return _BilinearSample.apply(grid, points=points)


def attention(query: Tensor, key: Tensor, value: Tensor) -> Tensor:
    """Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.

    Shapes (Q, d), (K, d), (K, d) -> (Q, d); batched leading axes are
    allowed as long as they broadcast.  An empty key set returns zeros,
    which covers scenes without any agents.
    """
    d = query.data.shape[-1]
    if key.data.shape[-1] != d or value.data.shape[-2] != key.data.shape[-2]:
        raise ValueError(
            f"attention shape mismatch: q {query.data.shape}, k {key.data.shape}, v {value.data.shape}"
        )
    if key.data.shape[-2] == 0:
        return Tensor(np.zeros(query.data.shape[:-1] + (value.data.shape[-1],)))
    key_t = _Transpose.apply(key)
    logits = mul(matmul(query, key_t), Tensor(1.0 / math.sqrt(d)))
    return matmul(softmax(logits, axis=-1), value)


class _Transpose(_Op):
    def forward(self, a):
        return np.swapaxes(a, -1, -2)

    def backward(self, grad):
        return (np.swapaxes(grad, -1, -2),)


def transpose(a: Tensor) -> Tensor:
    return _Transpose.apply(a)
