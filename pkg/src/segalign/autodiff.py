"""Minimal reverse-mode automatic differentiation over numpy arrays.

Implements exactly the operations the alignment losses and the decoder need:
broadcasting arithmetic, two-operand einsum, stable softmax/logsumexp,
gather-style indexing, and 3x3 patch extraction for convolutions.  All data
is float64.  Discrete selections (top-k masks, mined indices) enter the graph
as plain numpy constants, so no gradient flows through them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "tsum",
    "reshape",
    "transpose",
    "einsum",
    "softmax",
    "logsumexp",
    "take_along",
    "take_diag2",
    "extract_patches3x3",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the tape bookkeeping for reverse mode."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def backward(self):
        """Backpropagate from a scalar output, filling `.grad` on the leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + g


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g, b.data.shape) if b.requires_grad else None,
        )

    return _node(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return (
            _unbroadcast(g, a.data.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.data.shape) if b.requires_grad else None,
        )

    return _node(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return (
            _unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None,
        )

    return _node(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        ga = _unbroadcast(g / b.data, a.data.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
            if b.requires_grad
            else None
        )
        return (ga, gb)

    return _node(a.data / b.data, (a, b), back)


def neg(a) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _wrap(a)
    out_data = np.exp(a.data)
    return _node(out_data, (a,), lambda g: (g * out_data,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out_data = np.sqrt(a.data)
    return _node(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # numerically symmetric form, exact at both tails
    out_data = np.where(
        a.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(a.data))),
        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))),
    )
    return _node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def einsum(spec: str, a, b) -> Tensor:
    """Two-operand einsum.  Each input index must appear in the output or in
    the other operand, so the backward pass is itself an einsum."""
    a, b = _wrap(a), _wrap(b)
    lhs, out_spec = spec.replace(" ", "").split("->")
    a_spec, b_spec = lhs.split(",")
    if a.requires_grad and not set(a_spec) <= set(out_spec) | set(b_spec):
        raise ValueError(f"einsum spec {spec!r} not reversible for operand 0")
    if b.requires_grad and not set(b_spec) <= set(out_spec) | set(a_spec):
        raise ValueError(f"einsum spec {spec!r} not reversible for operand 1")

    def back(g):
        ga = (
            np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, b.data)
            if a.requires_grad
            else None
        )
        gb = (
            np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, a.data)
            if b.requires_grad
            else None
        )
        return (ga, gb)

    return _node(np.einsum(spec, a.data, b.data), (a, b), back)


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, (a,), back)


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    tot = e.sum(axis=axis, keepdims=True)
    out_data = m + np.log(tot)
    soft = e / tot
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _node(out_data, (a,), back)


def take_along(a, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along `axis` at fixed integer `indices` (same rank as `a`)."""
    a = _wrap(a)
    indices = np.asarray(indices)

    def back(g):
        ga = np.zeros_like(a.data)
        mesh = list(np.indices(indices.shape))
        mesh[axis] = indices
        np.add.at(ga, tuple(mesh), g)
        return (ga,)

    return _node(np.take_along_axis(a.data, indices, axis=axis), (a,), back)


def take_diag2(a) -> Tensor:
    """Extract a[i, i, ...] over the first two (equal-length) axes."""
    a = _wrap(a)
    n = a.data.shape[0]
    idx = np.arange(n)

    def back(g):
        ga = np.zeros_like(a.data)
        ga[idx, idx] = g
        return (ga,)

    return _node(a.data[idx, idx], (a,), back)


def extract_patches3x3(a) -> Tensor:
    """All 3x3 zero-padded neighborhoods of a (B, H, W, C) tensor.

    Returns shape (B, H, W, 3, 3, C); combined with einsum this gives a
    same-padding 3x3 convolution.
    """
    a = _wrap(a)
    batch, height, width, _ = a.data.shape
    padded = np.pad(a.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(1, 2))
    patches = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))

    def back(g):
        gpad = np.zeros((batch, height + 2, width + 2, a.data.shape[3]))
        for dy in range(3):
            for dx in range(3):
                gpad[:, dy : dy + height, dx : dx + width, :] += g[:, :, :, dy, dx, :]
        return (gpad[:, 1 : 1 + height, 1 : 1 + width, :],)

    return _node(patches, (a,), back)
