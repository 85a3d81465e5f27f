"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

Values are numpy arrays of rank 0 (scalar), 1 (vector) or 2 (matrix). Every
operation appends one node to an append-only tape; a reverse sweep from a
scalar output fills per-node gradient buffers. The engine is deliberately
small: just enough primitives to run an MLP forward pass and a chain of
unrolled flowsheet sweeps end to end.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AutogradError",
    "ShapeError",
    "TapeMismatchError",
    "Tape",
    "Var",
    "add",
    "sub",
    "mul",
    "matmul",
    "affine",
    "softplus",
    "square",
    "mean",
    "concat",
    "vslice",
    "scale",
    "jacobian",
]


class AutogradError(Exception):
    """Base class for tape errors."""


class ShapeError(AutogradError):
    """Operand shapes do not conform for the requested operation."""


class TapeMismatchError(AutogradError):
    """Operands were recorded on different tapes."""


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    # overflow-safe: max(x, 0) + log(1 + exp(-|x|))
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """Handle to one value recorded on a tape."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: "Var") -> "Var":
        return add(self, other)

    def __sub__(self, other: "Var") -> "Var":
        return sub(self, other)

    def __mul__(self, other: "Var") -> "Var":
        return mul(self, other)

    def __matmul__(self, other: "Var") -> "Var":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Var(index={self.index}, shape={self.value.shape})"


class Tape:
    """Append-only record of primitive operations plus gradient buffers.

    Node order is topological by construction (operands precede results).
    A tape can be reset and reused across training epochs to avoid churn.
    """

    def __init__(self):
        self._kinds: list[str] = []
        self._values: list[np.ndarray] = []
        self._parents: list[tuple[int, ...]] = []
        self._aux: list[object] = []
        self._grads: list[np.ndarray | None] = []

    def __len__(self) -> int:
        return len(self._kinds)

    def reset(self) -> None:
        """Discard all nodes; the tape can record a fresh computation."""
        self._kinds.clear()
        self._values.clear()
        self._parents.clear()
        self._aux.clear()
        self._grads.clear()

    # -- recording -------------------------------------------------------

    def _append(self, kind: str, value: np.ndarray, parents: tuple[int, ...],
                aux: object = None) -> Var:
        self._kinds.append(kind)
        self._values.append(value)
        self._parents.append(parents)
        self._aux.append(aux)
        self._grads.append(None)
        return Var(self, len(self._kinds) - 1, value)

    def input(self, value) -> Var:
        """Record an independent input (gradients retrievable after backward)."""
        return self._append("input", np.asarray(value, dtype=np.float64), ())

    def constant(self, value) -> Var:
        """Record a constant leaf. Gradients are computed but conventionally ignored."""
        return self._append("const", np.asarray(value, dtype=np.float64), ())

    def _check(self, *operands: Var) -> None:
        for v in operands:
            if v.tape is not self:
                raise TapeMismatchError(
                    "operand was recorded on a different tape; "
                    "cross-tape operations are not allowed")

    # -- backward --------------------------------------------------------

    def backward(self, y: Var) -> list[np.ndarray | None]:
        """Reverse sweep from scalar `y`; returns the per-node gradient buffers.

        Buffers are freshly zeroed on every call, so repeated backward
        passes from the same node give identical results.
        """
        self._check(y)
        if np.ndim(self._values[y.index]) != 0:
            raise ShapeError(
                f"backward requires a scalar output, got shape "
                f"{self._values[y.index].shape}")
        n = len(self._kinds)
        grads: list[np.ndarray | None] = [None] * n
        grads[y.index] = np.array(1.0)
        for i in range(y.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            kind = self._kinds[i]
            if kind in ("input", "const"):
                continue
            self._push(kind, i, g, grads)
        self._grads = grads
        return grads

    def grad(self, v: Var) -> np.ndarray:
        """Gradient of the last backward()'s output with respect to `v`."""
        self._check(v)
        g = self._grads[v.index]
        if g is None:
            return np.zeros_like(self._values[v.index])
        return g

    def _accum(self, grads, idx: int, contribution: np.ndarray) -> None:
        contribution = _unbroadcast(np.asarray(contribution), self._values[idx].shape)
        if grads[idx] is None:
            grads[idx] = contribution.copy() if contribution.base is not None else contribution
        else:
            grads[idx] = grads[idx] + contribution

    def _push(self, kind: str, i: int, g: np.ndarray, grads) -> None:
        parents = self._parents[i]
        values = self._values
        if kind == "add":
            a, b = parents
            self._accum(grads, a, g)
            self._accum(grads, b, g)
        elif kind == "sub":
            a, b = parents
            self._accum(grads, a, g)
            self._accum(grads, b, -g)
        elif kind == "mul":
            a, b = parents
            self._accum(grads, a, g * values[b])
            self._accum(grads, b, g * values[a])
        elif kind == "matmul":
            a, b = parents
            av, bv = values[a], values[b]
            if av.ndim == 2 and bv.ndim == 2:
                self._accum(grads, a, g @ bv.T)
                self._accum(grads, b, av.T @ g)
            elif av.ndim == 2 and bv.ndim == 1:
                self._accum(grads, a, np.outer(g, bv))
                self._accum(grads, b, av.T @ g)
            elif av.ndim == 1 and bv.ndim == 2:
                self._accum(grads, a, bv @ g)
                self._accum(grads, b, np.outer(av, g))
            else:  # 1-d dot
                self._accum(grads, a, g * bv)
                self._accum(grads, b, g * av)
        elif kind == "affine":
            x, w, b = parents
            xv, wv = values[x], values[w]
            if xv.ndim == 2:
                self._accum(grads, x, g @ wv.T)
                self._accum(grads, w, xv.T @ g)
                self._accum(grads, b, g.sum(axis=0))
            else:
                self._accum(grads, x, wv @ g)
                self._accum(grads, w, np.outer(xv, g))
                self._accum(grads, b, g)
        elif kind == "softplus":
            (a,) = parents
            self._accum(grads, a, g * self._aux[i])
        elif kind == "square":
            (a,) = parents
            self._accum(grads, a, g * (2.0 * values[a]))
        elif kind == "mean":
            (a,) = parents
            av = values[a]
            self._accum(grads, a, np.full(av.shape, float(g) / av.size))
        elif kind == "concat":
            offset = 0
            for p in parents:
                width = values[p].shape[-1]
                self._accum(grads, p, g[..., offset:offset + width])
                offset += width
        elif kind == "slice":
            (a,) = parents
            start, stop = self._aux[i]
            full = np.zeros_like(values[a])
            full[..., start:stop] = g
            self._accum(grads, a, full)
        elif kind == "scale":
            (a,) = parents
            self._accum(grads, a, g * self._aux[i])
        else:  # pragma: no cover - every recorded kind is handled above
            raise AutogradError(f"unknown op kind {kind!r}")


# -- primitive ops --------------------------------------------------------


def _binary_elementwise(kind: str, a: Var, b: Var, value: np.ndarray) -> Var:
    return a.tape._append(kind, value, (a.index, b.index))


def _require_broadcastable(kind: str, a: Var, b: Var) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(
            f"{kind}: shapes {a.value.shape} and {b.value.shape} do not broadcast")


def add(a: Var, b: Var) -> Var:
    a.tape._check(a, b)
    _require_broadcastable("add", a, b)
    return _binary_elementwise("add", a, b, a.value + b.value)


def sub(a: Var, b: Var) -> Var:
    a.tape._check(a, b)
    _require_broadcastable("sub", a, b)
    return _binary_elementwise("sub", a, b, a.value - b.value)


def mul(a: Var, b: Var) -> Var:
    a.tape._check(a, b)
    _require_broadcastable("mul", a, b)
    return _binary_elementwise("mul", a, b, a.value * b.value)


def matmul(a: Var, b: Var) -> Var:
    a.tape._check(a, b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError(f"matmul: rank-0 operand, shapes {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, shapes {av.shape} and {bv.shape}")
    return a.tape._append("matmul", av @ bv, (a.index, b.index))


def affine(x: Var, w: Var, b: Var) -> Var:
    """x @ w + b with bias broadcast over rows when x is a matrix."""
    x.tape._check(x, w, b)
    xv, wv, bv = x.value, w.value, b.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[0] or bv.shape != (wv.shape[1],):
        raise ShapeError(
            f"affine: shapes x={xv.shape}, w={wv.shape}, b={bv.shape} do not conform")
    return x.tape._append("affine", xv @ wv + bv, (x.index, w.index, b.index))


def softplus(a: Var) -> Var:
    # cache sigma(x) as the local partial
    return a.tape._append("softplus", _softplus(a.value), (a.index,),
                          aux=_sigmoid(a.value))


def square(a: Var) -> Var:
    return a.tape._append("square", a.value * a.value, (a.index,))


def mean(a: Var) -> Var:
    """Mean over all entries; result is scalar."""
    return a.tape._append("mean", np.asarray(a.value.mean()), (a.index,))


def concat(parts: list[Var]) -> Var:
    """Concatenate along the last axis."""
    if not parts:
        raise ShapeError("concat: empty operand list")
    tape = parts[0].tape
    tape._check(*parts)
    lead = parts[0].value.shape[:-1]
    for p in parts:
        if p.value.ndim == 0 or p.value.shape[:-1] != lead:
            raise ShapeError(
                f"concat: incompatible shapes {[p.value.shape for p in parts]}")
    value = np.concatenate([p.value for p in parts], axis=-1)
    return tape._append("concat", value, tuple(p.index for p in parts))


def vslice(a: Var, start: int, stop: int) -> Var:
    """Slice [start:stop] along the last axis."""
    n = a.value.shape[-1] if a.value.ndim else 0
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice: range [{start}:{stop}] invalid for shape {a.value.shape}")
    return a.tape._append("slice", a.value[..., start:stop].copy(), (a.index,),
                          aux=(start, stop))


def scale(a: Var, c: float) -> Var:
    """Multiply by a python float constant."""
    c = float(c)
    return a.tape._append("scale", a.value * c, (a.index,), aux=c)


def component(a: Var, i: int) -> Var:
    """Extract element i of a vector as a scalar (slice of width one)."""
    return mean(vslice(a, i, i + 1))


def jacobian(f, x) -> np.ndarray:
    """Dense Jacobian of a vector->vector function built from tape ops.

    `f` maps a vector Var to a vector Var; one backward pass per output
    component assembles the m x n matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xv = tape.input(x)
    y = f(xv)
    if y.value.ndim != 1:
        raise ShapeError(f"jacobian: f must return a vector, got shape {y.value.shape}")
    m, n = y.value.shape[0], x.shape[0]
    jac = np.empty((m, n))
    for i in range(m):
        tape.backward(component(y, i))
        jac[i, :] = tape.grad(xv)
    return jac
