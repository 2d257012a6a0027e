"""Forward-mode dual numbers with an n-component tangent.

The value and tangent entries may themselves be ``Dual`` instances, which is
how second derivatives are obtained (a dual of duals).
"""

from __future__ import annotations

import math


class Dual:
    """Number ``val + sum_j grad[j] * eps_j`` with ``eps_i * eps_j = 0``."""

    __slots__ = ("val", "grad")

    def __init__(self, val, grad):
        self.val = val
        self.grad = tuple(grad)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.grad!r})"

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, (0.0,) * len(self.grad))

    def __add__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.val + other, self.grad)
        return Dual(self.val + other.val, [a + b for a, b in zip(self.grad, other.grad)])

    __radd__ = __add__

    def __sub__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.val - other, self.grad)
        return Dual(self.val - other.val, [a - b for a, b in zip(self.grad, other.grad)])

    def __rsub__(self, other):
        return Dual(other - self.val, [-a for a in self.grad])

    def __neg__(self):
        return Dual(-self.val, [-a for a in self.grad])

    def __pos__(self):
        return self

    def __mul__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.val * other, [a * other for a in self.grad])
        return Dual(
            self.val * other.val,
            [self.val * b + a * other.val for a, b in zip(self.grad, other.grad)],
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Dual):
            return Dual(self.val / other, [a / other for a in self.grad])
        q = self.val / other.val
        return Dual(q, [(a - q * b) / other.val for a, b in zip(self.grad, other.grad)])

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("dual powers take integer exponents only")
        if k == 0:
            return Dual(1.0, (0.0,) * len(self.grad))
        scale = k * self.val ** (k - 1)
        return Dual(self.val**k, [scale * a for a in self.grad])


def _chain(x, f, df):
    """Apply a scalar function with derivative ``df`` to a dual or a float."""
    if isinstance(x, Dual):
        d = df(x.val)
        return Dual(f(x.val), [d * a for a in x.grad])
    return f(x)


def sin(x):
    return _chain(x, sin, cos) if isinstance(x, Dual) else math.sin(x)


def cos(x):
    return _chain(x, cos, lambda u: -sin(u)) if isinstance(x, Dual) else math.cos(x)


def exp(x):
    return _chain(x, exp, exp) if isinstance(x, Dual) else math.exp(x)


def tanh(x):
    if isinstance(x, Dual):
        return _chain(x, tanh, lambda u: 1.0 - tanh(u) * tanh(u))
    return math.tanh(x)


def sqrt(x):
    if isinstance(x, Dual):
        return _chain(x, sqrt, lambda u: 0.5 / sqrt(u))
    return math.sqrt(x)


def log(x):
    if isinstance(x, Dual):
        return _chain(x, log, lambda u: 1.0 / u)
    return math.log(x)


def value_of(x):
    """Innermost real value of a (possibly nested) dual."""
    while isinstance(x, Dual):
        x = x.val
    return x


FUNCTIONS = {"sin": sin, "cos": cos, "exp": exp, "tanh": tanh, "sqrt": sqrt, "log": log}
