"""Reverse-mode automatic differentiation over dense float64 tensors.

A Tape owns an append-only list of nodes; each node stores its parent
indices and a closure producing the local vector-Jacobian products.  Nodes
are recorded in evaluation order, so the list is already topologically
sorted and a single reversed sweep propagates gradients, visiting each node
exactly once.

Every forward value is checked finite; a NaN or Inf aborts immediately with
the name of the offending primitive.  All arithmetic is float64.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError, SingularityError

_DIV_EPS = 1e-12
_ARCCOS_CLAMP = 1.0 - 1e-7
_ABS_SMOOTH_EPS = 1e-12
_GRID_SNAP = 1e-9


class Tape:
    """Recording of one forward computation, reusable for one backward pass."""

    def __init__(self):
        self._parents: list[tuple[int, ...]] = []
        self._vjps: list[Optional[Callable]] = []
        self._shapes: list[tuple[int, ...]] = []
        self._grads: Optional[list] = None

    def __len__(self):
        return len(self._parents)

    def tensor(self, values) -> "Tensor":
        """Register a leaf tensor (attack substrate, weights, constants)."""
        values = np.asarray(values, dtype=np.float64)
        return self._record(values, (), None, "leaf")

    def _record(self, values, parents, vjp, op: str) -> "Tensor":
        if not np.all(np.isfinite(values)):
            bad = int(np.count_nonzero(~np.isfinite(values)))
            raise FloatingPointError(
                f"non-finite forward value in '{op}' ({bad} entries); aborting"
            )
        idx = len(self._parents)
        self._parents.append(tuple(p.index for p in parents))
        self._vjps.append(vjp)
        self._shapes.append(values.shape)
        self._grads = None
        return Tensor(self, idx, values)

    def backward(self, loss: "Tensor") -> None:
        """Propagate d(loss)/d(node) to every node at or before the loss.

        The loss must be a scalar.  Afterwards each tensor's .grad holds its
        gradient; leaves that did not feed the loss get zeros.
        """
        if loss.tape is not self:
            raise ContractError("loss was recorded on a different tape")
        if loss.values.shape != ():
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.values.shape}"
            )
        grads: list = [None] * len(self._parents)
        grads[loss.index] = np.array(1.0)
        for i in range(loss.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            parents = self._parents[i]
            if not parents:
                continue
            partials = self._vjps[i](g)
            for p, pg in zip(parents, partials):
                if pg is None:
                    continue
                if grads[p] is None:
                    grads[p] = pg.copy() if isinstance(pg, np.ndarray) else np.asarray(pg)
                else:
                    grads[p] = grads[p] + pg
        self._grads = grads

    def grad_of(self, t: "Tensor") -> np.ndarray:
        if self._grads is None:
            raise ContractError("backward has not been run on this tape")
        g = self._grads[t.index]
        if g is None:
            return np.zeros(self._shapes[t.index])
        return np.asarray(g, dtype=np.float64).reshape(self._shapes[t.index])


class Tensor:
    """Handle to one node of a tape: immutable values plus provenance."""

    __slots__ = ("tape", "index", "values")

    def __init__(self, tape: Tape, index: int, values: np.ndarray):
        self.tape = tape
        self.index = index
        self.values = values

    @property
    def shape(self):
        return self.values.shape

    @property
    def grad(self) -> np.ndarray:
        return self.tape.grad_of(self)

    def item(self) -> float:
        return float(self.values)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, node={self.index})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _split(a, b):
    """Identify the tape and constant-vs-tensor roles of two operands."""
    ta = isinstance(a, Tensor)
    tb = isinstance(b, Tensor)
    if not (ta or tb):
        raise ContractError("at least one operand must be a Tensor")
    tape = a.tape if ta else b.tape
    av = a.values if ta else np.asarray(a, dtype=np.float64)
    bv = b.values if tb else np.asarray(b, dtype=np.float64)
    return tape, av, bv, ta, tb


def _binary(a, b, op, fwd, dfa, dfb):
    tape, av, bv, ta, tb = _split(a, b)
    try:
        out = fwd(av, bv)
    except ValueError as e:
        raise ShapeError(f"{op}: {e}") from None
    parents = tuple(t for t, isv in ((a, ta), (b, tb)) if isv)

    def vjp(g):
        parts = []
        if ta:
            parts.append(_unbroadcast(dfa(g, av, bv), av.shape))
        if tb:
            parts.append(_unbroadcast(dfb(g, av, bv), bv.shape))
        return parts

    return tape._record(out, parents, vjp, op)


def add(a, b) -> Tensor:
    return _binary(a, b, "add", lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, "sub", lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, "mul", lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    _, _, bv, _, _ = _split(a, b)
    if np.any(np.abs(bv) < _DIV_EPS):
        raise SingularityError("division by value with magnitude < 1e-12")
    return _binary(a, b, "div", lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a: Tensor) -> Tensor:
    return a.tape._record(-a.values, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    tape, av, bv, ta, tb = _split(a, b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {av.shape} @ {bv.shape}")
    parents = tuple(t for t, isv in ((a, ta), (b, tb)) if isv)

    def vjp(g):
        parts = []
        if ta:
            parts.append(g @ bv.T)
        if tb:
            parts.append(av.T @ g)
        return parts

    return tape._record(av @ bv, parents, vjp, "matmul")


def _unary(a: Tensor, op, fwd, dfa):
    out = fwd(a.values)
    return a.tape._record(out, (a,), lambda g: (dfa(g, a.values, out),), op)


def sin(a: Tensor) -> Tensor:
    return _unary(a, "sin", np.sin, lambda g, x, y: g * np.cos(x))


def cos(a: Tensor) -> Tensor:
    return _unary(a, "cos", np.cos, lambda g, x, y: -g * np.sin(x))


def tanh(a: Tensor) -> Tensor:
    return _unary(a, "tanh", np.tanh, lambda g, x, y: g * (1.0 - y * y))


def exp(a: Tensor) -> Tensor:
    return _unary(a, "exp", np.exp, lambda g, x, y: g * y)


def sqrt(a: Tensor) -> Tensor:
    return _unary(a, "sqrt", np.sqrt, lambda g, x, y: g * 0.5 / y)


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), numerically stable; derivative is the sigmoid."""
    return _unary(
        a, "softplus",
        lambda x: np.logaddexp(0.0, x),
        lambda g, x, y: g / (1.0 + np.exp(-x)),
    )


def arccos(a: Tensor) -> Tensor:
    """arccos with the input clamped to +-(1 - 1e-7).

    The derivative is evaluated at the clamped point, so the gradient stays
    finite when the argument drifts onto or past +-1.
    """
    c = np.clip(a.values, -_ARCCOS_CLAMP, _ARCCOS_CLAMP)
    out = np.arccos(c)

    def vjp(g):
        return (g * (-1.0 / np.sqrt(1.0 - c * c)),)

    return a.tape._record(out, (a,), vjp, "arccos")


def abs_smooth(a: Tensor) -> Tensor:
    """Smoothed absolute value sqrt(x^2 + 1e-12), differentiable at 0."""
    out = np.sqrt(a.values * a.values + _ABS_SMOOTH_EPS)

    def vjp(g):
        return (g * a.values / out,)

    return a.tape._record(out, (a,), vjp, "abs_smooth")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clip values to [lo, hi]; gradient passes where lo <= x <= hi."""
    x = a.values
    out = np.clip(x, lo, hi)
    mask = np.ones_like(x)
    if lo is not None:
        mask = mask * (x >= lo)
    if hi is not None:
        mask = mask * (x <= hi)

    def vjp(g):
        return (g * mask,)

    return a.tape._record(out, (a,), vjp, "clamp")


def total_sum(a: Tensor) -> Tensor:
    out = np.asarray(a.values.sum())

    def vjp(g):
        return (np.broadcast_to(g, a.values.shape),)

    return a.tape._record(out, (a,), vjp, "sum")


def mean(a: Tensor) -> Tensor:
    n = a.values.size
    out = np.asarray(a.values.mean())

    def vjp(g):
        return (np.broadcast_to(g / n, a.values.shape),)

    return a.tape._record(out, (a,), vjp, "mean")


def reshape(a: Tensor, shape) -> Tensor:
    out = a.values.reshape(shape)

    def vjp(g):
        return (np.asarray(g).reshape(a.values.shape),)

    return a.tape._record(out, (a,), vjp, "reshape")


def take(a: Tensor, indices) -> Tensor:
    """Gather by flat indices into the flattened tensor.

    The output has the shape of the index array.  Backward scatter-adds, so
    repeated indices accumulate.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.values.size):
        raise ShapeError(
            f"take index out of range for tensor of size {a.values.size}"
        )
    out = a.values.reshape(-1)[idx]

    def vjp(g):
        buf = np.zeros(a.values.size)
        np.add.at(buf, idx.reshape(-1), np.asarray(g).reshape(-1))
        return (buf.reshape(a.values.shape),)

    return a.tape._record(out, (a,), vjp, "take")


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate flattened tensors into one 1-D tensor."""
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    tape = tensors[0].tape
    sizes = [t.values.size for t in tensors]
    out = np.concatenate([t.values.reshape(-1) for t in tensors])
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        g = np.asarray(g).reshape(-1)
        return tuple(
            g[offsets[i]:offsets[i + 1]].reshape(t.values.shape)
            for i, t in enumerate(tensors)
        )

    return tape._record(out, tuple(tensors), vjp, "concat")


def bilinear_sample(image: Tensor, xs, ys) -> Tensor:
    """Sample an image at continuous (x, y) pixel coordinates.

    image is (H, W) or (H, W, C); xs and ys are flat coordinate tensors of
    equal length N (x indexes columns).  Output is (N,) or (N, C).
    Coordinates are clamped to the image border for sampling; callers track
    validity separately.  Coordinates within 1e-9 of a grid line are snapped
    to it, so grid-aligned sampling reproduces pixels exactly.

    Differentiable in the image and in both coordinate tensors.
    """
    xs_t = isinstance(xs, Tensor)
    ys_t = isinstance(ys, Tensor)
    tape = image.tape
    img = image.values
    if img.ndim == 2:
        h, w = img.shape
        chans = img[:, :, None]
    elif img.ndim == 3:
        h, w, _ = img.shape
        chans = img
    else:
        raise ShapeError(f"bilinear_sample expects (H,W) or (H,W,C), got {img.shape}")
    xv = (xs.values if xs_t else np.asarray(xs, dtype=np.float64)).reshape(-1)
    yv = (ys.values if ys_t else np.asarray(ys, dtype=np.float64)).reshape(-1)
    if xv.shape != yv.shape:
        raise ShapeError("coordinate tensors must have equal length")

    def snap(v):
        r = np.rint(v)
        return np.where(np.abs(v - r) < _GRID_SNAP, r, v)

    xc = np.clip(snap(xv), 0.0, w - 1.0)
    yc = np.clip(snap(yv), 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xc), w - 2).astype(np.intp) if w > 1 else np.zeros_like(xc, dtype=np.intp)
    y0 = np.minimum(np.floor(yc), h - 2).astype(np.intp) if h > 1 else np.zeros_like(yc, dtype=np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (xc - x0)[:, None]
    wy = (yc - y0)[:, None]

    p00 = chans[y0, x0]
    p01 = chans[y0, x1]
    p10 = chans[y1, x0]
    p11 = chans[y1, x1]
    # four-weight form: at snapped grid points one weight is exactly 1 and
    # the rest 0, so grid-aligned samples reproduce pixels bitwise
    out = ((1.0 - wx) * (1.0 - wy) * p00 + wx * (1.0 - wy) * p01
           + (1.0 - wx) * wy * p10 + wx * wy * p11)

    # derivative of the clamp: zero where the raw coordinate left the image
    in_x = ((xv >= 0.0) & (xv <= w - 1.0)).astype(np.float64)
    in_y = ((yv >= 0.0) & (yv <= h - 1.0)).astype(np.float64)

    if img.ndim == 2:
        out = out[:, 0]

    parents = [image] + [t for t, isv in ((xs, xs_t), (ys, ys_t)) if isv]

    def vjp(g):
        g2 = np.asarray(g).reshape(xv.size, -1)
        w00 = (1.0 - wx) * (1.0 - wy)
        w01 = wx * (1.0 - wy)
        w10 = (1.0 - wx) * wy
        w11 = wx * wy
        gimg = np.zeros_like(chans)
        flat = gimg.reshape(-1, gimg.shape[-1])
        lin = lambda yy, xx: yy * w + xx
        np.add.at(flat, lin(y0, x0), g2 * w00)
        np.add.at(flat, lin(y0, x1), g2 * w01)
        np.add.at(flat, lin(y1, x0), g2 * w10)
        np.add.at(flat, lin(y1, x1), g2 * w11)
        parts = [gimg.reshape(img.shape)]
        if xs_t:
            dx = ((1.0 - wy) * (p01 - p00) + wy * (p11 - p10))
            parts.append((g2 * dx).sum(axis=1) * in_x)
        if ys_t:
            dy = ((1.0 - wx) * (p10 - p00) + wx * (p11 - p01))
            parts.append((g2 * dy).sum(axis=1) * in_y)
        return parts

    return tape._record(out, tuple(parents), vjp, "bilinear_sample")


def grad_sign(g: np.ndarray) -> np.ndarray:
    """Elementwise sign of a gradient array, with sign(0) = 0."""
    return np.sign(np.asarray(g, dtype=np.float64))
