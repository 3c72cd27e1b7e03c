"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Var` wraps one array plus the closures needed to push an adjoint
back to its parents. The primitive set is deliberately closed: affine maps,
relu, softmax, clamped log, gathers, sort-permutation application, abs,
powers, and reductions. That is everything the segmentation losses and the
sliced Wasserstein term require, and every primitive is checkable against
central finite differences.

Sorting is handled by computing a permutation from values (outside the tape)
and applying it with :func:`take_along`, which treats the permutation as
locally constant. This is a valid subgradient away from ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError


class Var:
    """Array value plus reverse-mode bookkeeping."""

    __slots__ = ("value", "parents", "vjps")

    def __init__(self, value, parents: tuple = (), vjps: tuple = ()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value + b.value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(g, b.value.shape),
        ),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value - b.value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g, a.value.shape),
            lambda g: _unbroadcast(-g, b.value.shape),
        ),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(
        a.value * b.value,
        parents=(a, b),
        vjps=(
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise InvalidInputError("matmul supports 2-D operands only")
    return Var(
        a.value @ b.value,
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0.0
    # np.maximum propagates NaN, so divergent forwards surface as NaN loss
    return Var(np.maximum(a.value, 0.0), parents=(a,), vjps=(lambda g: g * mask,))


def clamped_log(a, floor: float = 1e-12) -> Var:
    """log(max(x, floor)); zero gradient where the clamp is active."""
    a = as_var(a)
    clamped = np.maximum(a.value, floor)
    active = a.value > floor
    return Var(np.log(clamped), parents=(a,), vjps=(lambda g: g * active / clamped,))


def softmax(a, axis: int = -1) -> Var:
    a = as_var(a)
    x = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g):
        return y * (g - np.sum(g * y, axis=axis, keepdims=True))

    return Var(y, parents=(a,), vjps=(vjp,))


def absolute(a) -> Var:
    a = as_var(a)
    sign = np.sign(a.value)
    return Var(np.abs(a.value), parents=(a,), vjps=(lambda g: g * sign,))


def power(a, exponent: float) -> Var:
    a = as_var(a)
    exponent = float(exponent)
    if exponent == 1.0:
        return a
    y = a.value**exponent

    def vjp(g):
        return g * exponent * a.value ** (exponent - 1.0)

    return Var(y, parents=(a,), vjps=(vjp,))


def sum_(a, axis=None) -> Var:
    a = as_var(a)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), shape).copy()

    return Var(np.sum(a.value, axis=axis), parents=(a,), vjps=(vjp,))


def div_scalar(a, divisor: float) -> Var:
    a = as_var(a)
    divisor = float(divisor)
    return Var(a.value / divisor, parents=(a,), vjps=(lambda g: g / divisor,))


def mean(a, axis=None) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return div_scalar(sum_(a, axis=axis), n)


def reshape(a, shape) -> Var:
    a = as_var(a)
    old = a.value.shape
    return Var(a.value.reshape(shape), parents=(a,), vjps=(lambda g: g.reshape(old),))


def take_rows(a, idx) -> Var:
    """Gather rows ``a[idx]``; adjoint scatter-adds duplicates."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return Var(a.value[idx], parents=(a,), vjps=(vjp,))


def pick(a, rows, cols) -> Var:
    """Gather ``a[rows, cols]`` as a vector (per-pixel label probabilities)."""
    a = as_var(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return out

    return Var(a.value[rows, cols], parents=(a,), vjps=(vjp,))


def take_along(a, idx, axis: int = 0) -> Var:
    """Apply a fixed (sort) permutation or quantile index along ``axis``."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.value.shape

    def vjp(g):
        out = np.zeros(shape)
        grids = list(np.ogrid[tuple(slice(0, s) for s in idx.shape)])
        grids[axis] = idx
        np.add.at(out, tuple(grids), g)
        return out

    return Var(np.take_along_axis(a.value, idx, axis=axis), parents=(a,), vjps=(vjp,))


def grad(out: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Adjoints of a scalar ``out`` with respect to each Var in ``wrt``.

    Vars not reachable from ``out`` get zero gradients of matching shape.
    """
    if out.value.ndim != 0:
        raise InvalidInputError("grad expects a scalar output")
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    adjoint: dict[int, np.ndarray] = {id(out): np.ones(())}
    for node in reversed(order):
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + contribution
            else:
                adjoint[key] = contribution
    return [adjoint.get(id(v), np.zeros(v.value.shape)) for v in wrt]


@dataclass
class GradCheckResult:
    """Outcome of a finite-difference gradient check."""

    max_rel_error: float
    n_checked: int
    skipped: list[int] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def grad_check(
    fn: Callable[[Var], Var],
    point,
    eps: float = 1e-6,
    tie_tol: float = 1e-3,
) -> GradCheckResult:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. Coordinates where the
    second difference betrays a kink (a sort tie crossing within ``eps``,
    a relu boundary) are skipped and reported instead of failing the check.
    """
    if not (1e-8 < eps < 1e-2):
        raise InvalidInputError(f"eps must lie in (1e-8, 1e-2), got {eps}")
    x0 = np.asarray(point, dtype=np.float64)
    leaf = Var(x0)
    out = fn(leaf)
    if out.value.ndim != 0:
        raise InvalidInputError("grad_check expects a scalar-valued function")
    analytic = grad(out, [leaf])[0]
    f0 = float(out.value)

    flat = x0.ravel()
    max_err = 0.0
    skipped: list[int] = []
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        f_plus = float(fn(Var(bumped.reshape(x0.shape))).value)
        bumped[i] = flat[i] - eps
        f_minus = float(fn(Var(bumped.reshape(x0.shape))).value)
        numeric = (f_plus - f_minus) / (2.0 * eps)
        slope_jump = abs(f_plus + f_minus - 2.0 * f0) / eps
        if slope_jump > tie_tol * max(1.0, abs(numeric)):
            skipped.append(i)
            continue
        err = abs(analytic.ravel()[i] - numeric) / max(1.0, abs(numeric))
        max_err = max(max_err, err)
    return GradCheckResult(max_rel_error=max_err, n_checked=flat.size - len(skipped), skipped=skipped)
