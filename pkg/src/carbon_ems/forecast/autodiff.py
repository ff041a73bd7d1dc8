"""A small reverse-mode autodiff over numpy arrays.

Only the operations the attention forecaster needs are provided. Each op
records its parents and a closure that pushes the output gradient back.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, data, parents=(), backward=None, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))
        return Tensor(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: self._accumulate(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))
        return Tensor(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float):
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            if a.ndim == 1 or b.ndim == 1:
                raise NotImplementedError("matmul backward needs >= 2-D operands")
            self._accumulate(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            other._accumulate(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))
        return Tensor(a @ b, (self, other), back)

    # -- shape -----------------------------------------------------------
    def reshape(self, *shape):
        old = self.shape
        return Tensor(self.data.reshape(*shape), (self,), lambda g: self._accumulate(g.reshape(old)))

    def transpose(self, *axes):
        inv = np.argsort(axes)
        return Tensor(self.data.transpose(axes), (self,), lambda g: self._accumulate(g.transpose(inv)))

    def swap_last(self):
        axes = list(range(self.data.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(*axes)

    # -- reductions and nonlinearities -----------------------------------
    def sum(self):
        return Tensor(self.data.sum(), (self,), lambda g: self._accumulate(np.broadcast_to(g, self.shape).copy()))

    def mean(self):
        n = self.data.size
        return Tensor(self.data.mean(), (self,), lambda g: self._accumulate(np.full(self.shape, g / n)))

    def relu(self):
        mask = self.data > 0
        return Tensor(self.data * mask, (self,), lambda g: self._accumulate(g * mask))

    def square(self):
        return Tensor(self.data ** 2, (self,), lambda g: self._accumulate(2.0 * self.data * g))

    def softmax(self):
        """Softmax over the last axis."""
        z = self.data - self.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            self._accumulate(p * (g - (g * p).sum(axis=-1, keepdims=True)))
        return Tensor(p, (self,), back)

    def normalize(self, eps: float):
        """Zero-mean, unit-variance rows over the last axis (no affine part)."""
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv
        n = x.shape[-1]

        def back(g):
            gm = g.mean(axis=-1, keepdims=True)
            gy = (g * y).mean(axis=-1, keepdims=True)
            self._accumulate(inv * (g - gm - y * gy))
        return Tensor(y, (self,), back)

    # -- driver ----------------------------------------------------------
    def backward(self):
        order, seen = [], set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)
