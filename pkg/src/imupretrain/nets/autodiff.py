"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Small on purpose: float64 everywhere, only the operations the encoder and
its losses need.  Every op records its parents and a vector-Jacobian
callback; ``backward`` walks the tape in reverse topological order.

Buffer convention for vjp callbacks: the incoming gradient ``g`` is owned by
the node being processed and is dead afterwards, so a callback may modify it
in place and hand it to at most one parent; every other returned gradient
must be a fresh array (or a view of a dead buffer).  The accumulator then
never needs defensive copies.
"""

from __future__ import annotations

import math

import numpy as np
from ..errors import NumericsError

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), vjp=None):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.op = op
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = Tensor(self.data + other, op="shift", parents=(self,))
            out._vjp = lambda g: (g,)
            return out
        other = _as_tensor(other)
        out = Tensor(self.data + other.data, op="add", parents=(self, other))
        sa, sb = self.data.shape, other.data.shape

        def vjp(g):
            ga = _unbroadcast(g, sa)
            gb = _unbroadcast(g, sb)
            if gb is ga:  # both pass-throughs alias g; second parent needs its own
                gb = g.copy()
            return ga, gb

        out._vjp = vjp
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, op="neg", parents=(self,))
        out._vjp = lambda g: (np.negative(g, out=g),)
        return out

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            out = Tensor(other - self.data, op="rsub", parents=(self,))
            out._vjp = lambda g: (np.negative(g, out=g),)
            return out
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            out = Tensor(self.data * other, op="scale", parents=(self,))

            def scale_vjp(g):
                g *= other
                return (g,)

            out._vjp = scale_vjp
            return out
        other = _as_tensor(other)
        out = Tensor(self.data * other.data, op="mul", parents=(self, other))

        def vjp(g):
            ga = _unbroadcast(g * other.data, self.data.shape)
            if g.shape == self.data.shape == other.data.shape:
                gb = np.multiply(g, self.data, out=g)
            else:
                gb = _unbroadcast(g * self.data, other.data.shape)
            return ga, gb

        out._vjp = vjp
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return self * _as_tensor(other).reciprocal()

    def __rtruediv__(self, other):
        if isinstance(other, (int, float)):
            return self.reciprocal() * other
        return _as_tensor(other) * self.reciprocal()

    def __matmul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.data @ other.data, op="matmul", parents=(self, other))

        def vjp(g):
            a, b = self.data, other.data
            if b.ndim == 1:
                ga = np.outer(g, b) if a.ndim > 1 else g * b
                gb = a.T @ g if a.ndim > 1 else a * g
            elif a.ndim == 1:
                ga = g @ b.T
                gb = np.outer(a, g)
            else:
                ga = g @ np.swapaxes(b, -1, -2)
                gb = np.swapaxes(a, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        out._vjp = vjp
        return out

    def reciprocal(self):
        out = Tensor(1.0 / self.data, op="reciprocal", parents=(self,))

        def vjp(g):
            g *= out.data
            g *= out.data
            return (np.negative(g, out=g),)

        out._vjp = vjp
        return out

    def square(self):
        out = Tensor(self.data * self.data, op="square", parents=(self,))

        def vjp(g):
            g *= self.data
            g *= 2.0
            return (g,)

        out._vjp = vjp
        return out

    def sqrt(self):
        out = Tensor(np.sqrt(self.data), op="sqrt", parents=(self,))

        def vjp(g):
            g /= out.data
            g *= 0.5
            return (g,)

        out._vjp = vjp
        return out

    def exp(self):
        out = Tensor(np.exp(self.data), op="exp", parents=(self,))
        out._vjp = lambda g: (np.multiply(g, out.data, out=g),)
        return out

    def log(self):
        out = Tensor(np.log(self.data), op="log", parents=(self,))
        out._vjp = lambda g: (np.divide(g, self.data, out=g),)
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), op="tanh", parents=(self,))

        def vjp(g):
            g *= 1.0 - out.data * out.data
            return (g,)

        out._vjp = vjp
        return out

    def sigmoid(self):
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)), op="sigmoid", parents=(self,))

        def vjp(g):
            g *= out.data
            g *= 1.0 - out.data
            return (g,)

        out._vjp = vjp
        return out

    def silu(self):
        """Smooth gated activation x * sigmoid(x)."""
        x = self.data
        s = 1.0 / (1.0 + np.exp(-x))
        out = Tensor(x * s, op="silu", parents=(self,))

        def vjp(g):
            t = 1.0 - s
            t *= x
            t += 1.0
            t *= s
            g *= t
            return (g,)

        out._vjp = vjp
        return out

    def clip_min(self, floor: float):
        """Elementwise max(x, floor); gradient is zero where clamped."""
        clamped = self.data < floor
        out = Tensor(np.where(clamped, floor, self.data), op="clip_min", parents=(self,))

        def vjp(g):
            g[clamped] = 0.0
            return (g,)

        out._vjp = vjp
        return out

    # -- reductions / shape -------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), op="sum", parents=(self,))

        def vjp(g):
            g = np.asarray(g)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.data.shape).copy(),)

        out._vjp = vjp
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), op="reshape", parents=(self,))
        out._vjp = lambda g: (g.reshape(self.data.shape),)
        return out

    def transpose(self, axes):
        inverse = tuple(np.argsort(axes))
        out = Tensor(self.data.transpose(axes), op="transpose", parents=(self,))
        out._vjp = lambda g: (g.transpose(inverse),)
        return out

    def take_time(self, index: int):
        """Select step ``index`` along axis 1 of a (B, T, H) tensor."""
        out = Tensor(self.data[:, index, :], op="take_time", parents=(self,))

        def vjp(g):
            full = np.zeros_like(self.data)
            full[:, index, :] = g
            return (full,)

        out._vjp = vjp
        return out

    def take_rows(self, start: int, stop: int):
        """Select rows [start, stop) along axis 0."""
        out = Tensor(self.data[start:stop], op="take_rows", parents=(self,))

        def vjp(g):
            full = np.zeros_like(self.data)
            full[start:stop] = g
            return (full,)

        out._vjp = vjp
        return out

    def softmax(self):
        """Softmax over the last axis."""
        y = self.data - self.data.max(axis=-1, keepdims=True)
        np.exp(y, out=y)
        y /= y.sum(axis=-1, keepdims=True)
        out = Tensor(y, op="softmax", parents=(self,))

        def vjp(g):
            dot = np.einsum("...i,...i->...", g, y)[..., None]
            g -= dot
            g *= y
            return (g,)

        out._vjp = vjp
        return out

    def gather_labels(self, labels: np.ndarray):
        """Pick one column per row of a (B, C) tensor: out[b] = x[b, labels[b]]."""
        rows = np.arange(self.data.shape[0])
        out = Tensor(self.data[rows, labels], op="gather_labels", parents=(self,))

        def vjp(g):
            full = np.zeros_like(self.data)
            full[rows, labels] = g
            return (full,)

        out._vjp = vjp
        return out

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, grad={self.grad is not None})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value, name: str = "param") -> Tensor:
    return Tensor(value, requires_grad=True, op=name)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis, built from primitives."""
    centered = x - x.mean(axis=-1, keepdims=True)
    var = centered.square().mean(axis=-1, keepdims=True)
    return centered * (var + eps).reciprocal().sqrt() * gain + bias


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b over the last axis; one flat GEMM regardless of batch dims."""
    in_dim, out_dim = w.data.shape
    x2 = x.data.reshape(-1, in_dim)
    y = x2 @ w.data
    y += b.data
    out = Tensor(
        y.reshape(*x.data.shape[:-1], out_dim), op="linear", parents=(x, w, b)
    )

    def vjp(g):
        g2 = g.reshape(-1, out_dim)
        dx = (g2 @ w.data.T).reshape(x.data.shape)
        dw = x2.T @ g2
        db = g2.sum(axis=0)
        return dx, dw, db

    out._vjp = vjp
    return out


def affine2(x: Tensor, w: Tensor, h: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + h @ u + b for recurrent gates (2-d inputs)."""
    y = x.data @ w.data
    y += h.data @ u.data
    y += b.data
    out = Tensor(y, op="affine2", parents=(x, w, h, u, b))

    def vjp(g):
        return (
            g @ w.data.T,
            x.data.T @ g,
            g @ u.data.T,
            h.data.T @ g,
            g.sum(axis=0),
        )

    out._vjp = vjp
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _diagnose_nonfinite(order: list[Tensor]) -> str:
    for node in order:  # leaves first: report the earliest offender
        if not np.all(np.isfinite(node.data)):
            return node.op
    return "unknown"


def backward(loss: Tensor, check_numerics: bool = True) -> None:
    """Accumulate gradients of ``loss`` into every reachable parameter's ``.grad``."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    order = _topo_order(loss)
    if check_numerics and not np.isfinite(loss.data).all():
        raise NumericsError(
            f"non-finite loss; first non-finite op: {_diagnose_nonfinite(order)!r}"
        )
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None or node.grad is None or not node.requires_grad:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if not isinstance(g, np.ndarray):  # 0-d results decay to numpy scalars
                g = np.asarray(g)
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad += g
        node.grad = None  # buffer ownership passes to the parents
