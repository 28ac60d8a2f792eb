"""Reverse-mode autodiff over matrices, at the granularity of our kernels.

A Tape records one Var per intermediate matrix together with a VJP closure.
Forward computation goes through exactly the same compiled kernels as the
rest of the package, so a taped forward pass reproduces the untaped value
bit-for-bit; only the backward sweep introduces new arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ShapeError

__all__ = ["Tape", "Var", "backward"]


@dataclass(frozen=True)
class Var:
    value: np.ndarray
    index: int


@dataclass
class Tape:
    """Recorded computation: per-Var inputs and VJP closures, plus param leaves."""

    inputs: list[tuple[int, ...]] = field(default_factory=list)
    vjps: list = field(default_factory=list)
    params: list[Var] = field(default_factory=list)
    loss: Var | None = None

    def _record(self, value, parents=(), vjp=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        v = Var(value, len(self.inputs))
        self.inputs.append(tuple(p.index for p in parents))
        self.vjps.append(vjp)
        return v

    def constant(self, value) -> Var:
        return self._record(value)

    def parameter(self, value) -> Var:
        v = self._record(value)
        self.params.append(v)
        return v


def backward(tape: Tape, root: Var | None = None) -> np.ndarray:
    """Gradient of the recorded scalar loss w.r.t. every parameter, flattened.

    Parameters are returned in registration order, each raveled row-major,
    matching the flat layout used by the optimizer.
    """
    if root is None:
        root = tape.loss
    if root is None:
        raise ShapeError("tape has no recorded loss")
    grads: list[np.ndarray | None] = [None] * len(tape.inputs)
    grads[root.index] = np.ones_like(root.value)
    for i in range(root.index, -1, -1):
        g = grads[i]
        if g is None or tape.vjps[i] is None:
            continue
        parent_grads = tape.vjps[i](g)
        for p, pg in zip(tape.inputs[i], parent_grads):
            if pg is None:
                continue
            if grads[p] is None:
                grads[p] = pg
            else:
                grads[p] = grads[p] + pg
    pieces = []
    for v in tape.params:
        g = grads[v.index]
        pieces.append(np.zeros(v.value.size) if g is None else np.ravel(g))
    return np.concatenate(pieces) if pieces else np.zeros(0)


# ---------------------------------------------------------------------------
# Primitives.  Forward math mirrors the eager code paths exactly.
# ---------------------------------------------------------------------------


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    out = _kernels.matmul(a.value, b.value)
    av, bv = a.value, b.value

    def vjp(g):
        return (
            _kernels.matmul(g, np.ascontiguousarray(bv.T)),
            _kernels.matmul(np.ascontiguousarray(av.T), g),
        )

    return tape._record(out, (a, b), vjp)


def transpose(tape: Tape, a: Var) -> Var:
    out = np.ascontiguousarray(a.value.T)
    return tape._record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))


def reshape_row(tape: Tape, a: Var) -> Var:
    """Flatten to a single row (row-major), e.g. K x m -> 1 x K*m."""
    shape = a.value.shape
    out = a.value.reshape(1, -1)
    return tape._record(out, (a,), lambda g: (g.reshape(shape),))


def add(tape: Tape, a: Var, b: Var) -> Var:
    return tape._record(a.value + b.value, (a, b), lambda g: (g, g))


def mul(tape: Tape, a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    return tape._record(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(tape: Tape, a: Var, c: float) -> Var:
    return tape._record(a.value * c, (a,), lambda g: (g * c,))


def div_const(tape: Tape, a: Var, c: float) -> Var:
    return tape._record(a.value / c, (a,), lambda g: (g / c,))


def add_const(tape: Tape, a: Var, c: float) -> Var:
    return tape._record(a.value + c, (a,), lambda g: (g,))


def add_rowvec(tape: Tape, a: Var, v: Var) -> Var:
    """a + v with v a 1 x m row broadcast down the rows of a."""
    out = a.value + v.value
    return tape._record(out, (a, v), lambda g: (g, g.sum(axis=0, keepdims=True)))


def broadcast_rows(tape: Tape, v: Var, n: int) -> Var:
    out = np.repeat(v.value, n, axis=0)
    return tape._record(out, (v,), lambda g: (g.sum(axis=0, keepdims=True),))


def exp(tape: Tape, a: Var) -> Var:
    out = np.exp(a.value)
    return tape._record(out, (a,), lambda g: (g * out,))


def relu(tape: Tape, a: Var) -> Var:
    out = np.maximum(a.value, 0.0)
    mask = a.value > 0.0
    return tape._record(out, (a,), lambda g: (g * mask,))


def sigmoid(tape: Tape, a: Var) -> Var:
    out = _kernels.sigmoid(a.value)
    return tape._record(out, (a,), lambda g: (g * out * (1.0 - out),))


def layer_norm(tape: Tape, x: Var, gain: Var, bias: Var, eps: float) -> Var:
    """Row-wise LayerNorm; gain/bias are 1 x m Vars."""
    out = _kernels.layer_norm_rows(x.value, gain.value[0], bias.value[0], eps)
    xv = x.value
    m = xv.shape[1]
    mu = xv.mean(axis=1, keepdims=True)
    var = ((xv - mu) ** 2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    gv = gain.value[0]

    def vjp(g):
        dxhat = g * gv
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        dgain = (g * xhat).sum(axis=0, keepdims=True)
        dbias = g.sum(axis=0, keepdims=True)
        return dx, dgain, dbias

    return tape._record(out, (x, gain, bias), vjp)


def slot_normalize(tape: Tape, a: Var) -> Var:
    sums = _kernels.exact_row_sums(a.value)
    out = _kernels.divide_rows(a.value, sums)

    def vjp(g):
        return ((g - (g * out).sum(axis=1, keepdims=True)) / sums,)

    return tape._record(out, (a,), vjp)


def weighted_sum_pool(tape: Tape, w: Var, v: Var) -> Var:
    out = _kernels.weighted_sum_pool(w.value, v.value)
    wv, vv = w.value, v.value

    def vjp(g):
        return (
            _kernels.matmul(vv, np.ascontiguousarray(g.T)),
            _kernels.matmul(wv, g),
        )

    return tape._record(out, (w, v), vjp)


def weighted_extreme_pool(tape: Tape, w: Var, v: Var, take_max: bool) -> Var:
    out, arg = _kernels.weighted_extreme_pool(w.value, v.value, take_max)
    wv, vv = w.value, v.value

    def vjp(g):
        dw = np.zeros_like(wv)
        dv = np.zeros_like(vv)
        k, m = g.shape
        for a in range(k):
            for b in range(m):
                i = arg[a, b]
                dw[i, a] += g[a, b] * vv[i, b]
                dv[i, b] += g[a, b] * wv[i, a]
        return dw, dv

    return tape._record(out, (w, v), vjp)


def column_sums(tape: Tape, a: Var) -> Var:
    out = _kernels.column_sums(a.value)
    n = a.value.shape[0]
    return tape._record(out, (a,), lambda g: (np.repeat(g, n, axis=0),))


def column_extreme(tape: Tape, a: Var, take_max: bool) -> Var:
    out, arg = _kernels.column_extreme(a.value, take_max)
    av = a.value

    def vjp(g):
        da = np.zeros_like(av)
        for j in range(av.shape[1]):
            da[arg[0, j], j] += g[0, j]
        return (da,)

    return tape._record(out, (a,), vjp)


def softmax_rows(tape: Tape, a: Var) -> Var:
    out = _kernels.softmax_rows(a.value)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return tape._record(out, (a,), vjp)


def pairwise_extreme(tape: Tape, a: Var, b: Var, take_max: bool) -> Var:
    """Elementwise max/min of two states; ties route the gradient to `a`."""
    if take_max:
        out = np.maximum(a.value, b.value)
        keep_a = a.value >= b.value
    else:
        out = np.minimum(a.value, b.value)
        keep_a = a.value <= b.value
    return tape._record(out, (a, b), lambda g: (g * keep_a, g * ~keep_a))


def sum_sq_diff(tape: Tape, pred: Var, targets: np.ndarray) -> Var:
    """Total squared Euclidean distance from one 1 x D prediction to each target row."""
    resid = pred.value - targets
    out = np.array([[float((resid * resid).sum())]])
    return tape._record(out, (pred,), lambda g: (2.0 * g[0, 0] * resid.sum(axis=0, keepdims=True),))
