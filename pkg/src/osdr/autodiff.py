"""Dense float64 arithmetic with tape-based reverse-mode differentiation.

Values are plain ``numpy`` arrays. An operation touching at least one
:class:`Tensor` returns a :class:`Tensor` and, when that tensor belongs to a
:class:`GradientTape`, appends a record to the tape. An operation on plain
arrays just returns the array result, so the same functions double as
ordinary numerics.

Example
-------
>>> tape = GradientTape()
>>> x = tape.watch(np.array([1.0, 2.0]))
>>> grads = backward(tape, sum(square(x)))
>>> grads[x]
array([2., 4.])
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, UsageError

NORM_EPS = 1e-12


class Tensor:
    """A value participating in (possibly) recorded computation."""

    __slots__ = ("value", "tape", "__weakref__")

    def __init__(self, value, tape=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, taped={self.tape is not None})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class GradientTape:
    """Ordered log of primitive operations plus the watched parameters."""

    def __init__(self):
        self._records = []
        self.params = []

    def watch(self, value):
        t = Tensor(np.array(value, dtype=np.float64, copy=True), self)
        self.params.append(t)
        return t

    def _record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self._records)


def backward(tape, loss):
    """Return ``{param: gradient}`` for every parameter watched on ``tape``.

    Records are replayed in exact reverse order. Parameters that do not
    influence ``loss`` get zero gradients of matching shape.
    """
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise UsageError("loss must be a tensor recorded on this tape")
    if loss.value.size != 1:
        raise UsageError(f"loss must be scalar, got shape {loss.value.shape}")
    grads = {id(loss): np.ones_like(loss.value)}
    for out, inputs, backward_fn in reversed(tape._records):
        g = grads.get(id(out))
        if g is None:
            continue
        for inp, gi in zip(inputs, backward_fn(g)):
            if gi is None or not isinstance(inp, Tensor) or inp.tape is not tape:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    return {p: grads.get(id(p), np.zeros_like(p.value)) for p in tape.params}


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _op(value, inputs, backward_fn):
    tapes = {id(x.tape): x.tape for x in inputs if isinstance(x, Tensor) and x.tape is not None}
    if len(tapes) > 1:
        raise UsageError("operands belong to different tapes")
    if not any(isinstance(x, Tensor) for x in inputs):
        return value
    tape = next(iter(tapes.values())) if tapes else None
    out = Tensor(value, tape)
    if tape is not None:
        tape._record(out, inputs, backward_fn)
    return out


def _same_shape(name, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    return _op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return _op(_value(a).T.copy(), (a,), lambda g: (g.T,))


def add(a, b):
    av, bv = _value(a), _value(b)
    if bv.ndim == 0 or av.ndim == 0:
        return _op(av + bv, (a, b), lambda g: (
            g if av.ndim else np.sum(g), g if bv.ndim else np.sum(g)))
    _same_shape("add", av, bv)
    return _op(av + bv, (a, b), lambda g: (g, g))


def add_row(m, row):
    """Add a length-k vector to every row of an n x k matrix."""
    mv, rv = _value(m), _value(row)
    if mv.ndim != 2 or rv.shape != (mv.shape[1],):
        raise DimensionError(f"add_row: {mv.shape} and {rv.shape}")
    return _op(mv + rv, (m, row), lambda g: (g, g.sum(axis=0)))


def sub(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim and bv.ndim:
        _same_shape("sub", av, bv)
    return _op(av - bv, (a, b), lambda g: (
        g if av.ndim else np.sum(g), -g if bv.ndim else -np.sum(g)))


def mul(a, b):
    av, bv = _value(a), _value(b)
    _same_shape("mul", av, bv)
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    c = float(c)
    return _op(_value(a) * c, (a,), lambda g: (g * c,))


def reshape(a, shape):
    av = _value(a)
    return _op(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),))


def concat_cols(parts):
    vals = [_value(p) for p in parts]
    if len({v.shape[0] for v in vals}) != 1:
        raise DimensionError("concat_cols: row counts differ: " + str([v.shape for v in vals]))
    edges = np.cumsum([0] + [v.shape[1] for v in vals])

    def back(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(vals)))

    return _op(np.concatenate(vals, axis=1), tuple(parts), back)


def take_rows(a, idx):
    av = _value(a)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _op(av[idx], (a,), back)


def take_cols(a, idx):
    av = _value(a)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        out = np.zeros_like(av)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return _op(av[:, idx], (a,), back)


def gather(a, rows, cols):
    """Elements ``a[rows[k], cols[k]]`` as a vector."""
    av = _value(a)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def back(g):
        out = np.zeros_like(av)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return _op(av[rows, cols], (a,), back)


# ---------------------------------------------------------------- reductions


def sum(a):  # noqa: A001 - mirrors numpy naming
    av = _value(a)
    return _op(np.sum(av), (a,), lambda g: (np.full_like(av, g),))


def mean(a):
    av = _value(a)
    n = av.size
    return _op(np.sum(av) / n, (a,), lambda g: (np.full_like(av, g / n),))


def row_norms(a):
    """Euclidean norm of each row; the gradient at a zero row is zero."""
    av = _value(a)
    norms = np.sqrt(np.sum(av * av, axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)

    def back(g):
        return ((g / safe)[:, None] * av * (norms > 0.0)[:, None],)

    return _op(norms, (a,), back)


# ---------------------------------------------------------------- elementwise


def square(a):
    av = _value(a)
    return _op(av * av, (a,), lambda g: (2.0 * av * g,))


def log(a):
    av = _value(a)
    return _op(np.log(av), (a,), lambda g: (g / av,))


def exp(a):
    out = np.exp(_value(a))
    return _op(out, (a,), lambda g: (g * out,))


def leaky_relu(a, slope=0.2):
    av = _value(a)
    pos = av > 0.0
    return _op(np.where(pos, av, slope * av), (a,), lambda g: (np.where(pos, g, slope * g),))


# ---------------------------------------------------------------- row-wise maps


def softmax_rows(m):
    """Row-wise softmax with per-row max subtraction."""
    mv = _value(m)
    shifted = mv - mv.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return _op(p, (m,), back)


def masked_softmax_rows(m, mask):
    """Softmax of each row restricted to the entries where ``mask`` is true.

    Entries outside the mask get probability exactly 0. Every row needs at
    least one unmasked entry.
    """
    mv = _value(m)
    mask = np.asarray(mask, dtype=bool)
    _same_shape("masked_softmax_rows", mv, mask)
    if not mask.any(axis=1).all():
        raise UsageError("masked_softmax_rows: a row has no admissible entry")
    filled = np.where(mask, mv, -np.inf)
    shifted = np.where(mask, mv - filled.max(axis=1, keepdims=True), 0.0)
    e = np.where(mask, np.exp(shifted), 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

    return _op(p, (m,), back)


def log_softmax_rows(m):
    mv = _value(m)
    shifted = mv - mv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _op(out, (m,), back)


def normalize_rows(a, eps=NORM_EPS):
    """Scale rows to unit length; rows with norm below ``eps`` become zero."""
    av = _value(a)
    norms = np.sqrt(np.sum(av * av, axis=1, keepdims=True))
    live = norms >= eps
    inv = np.where(live, 1.0 / np.where(live, norms, 1.0), 0.0)
    u = av * inv

    def back(g):
        return ((g - u * np.sum(g * u, axis=1, keepdims=True)) * inv,)

    return _op(u, (a,), back)


def pairwise_sq_dists(a):
    """Matrix of squared Euclidean distances between the rows of ``a``."""
    av = _value(a)
    diff = av[:, None, :] - av[None, :, :]
    d2 = np.sum(diff * diff, axis=2)

    def back(g):
        gs = g + g.T
        return (2.0 * (gs.sum(axis=1)[:, None] * av - gs @ av),)

    return _op(d2, (a,), back)


# ---------------------------------------------------------------- vector helpers


def cosine_similarity(u, v):
    """Cosine of the angle between two vectors; 0 when either is (near) zero."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"cosine_similarity: lengths {u.size} and {v.size} differ")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu < NORM_EPS or nv < NORM_EPS:
        return 0.0
    return float(min(1.0, max(-1.0, float(u @ v) / (nu * nv))))


def l2_distance(u, v):
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionError(f"l2_distance: lengths {u.size} and {v.size} differ")
    d = u - v
    return math.sqrt(float(d @ d))


# ---------------------------------------------------------------- gradient checks


def numerical_gradient(fn, values, eps=1e-5):
    """Central-difference gradients of scalar ``fn(*values)`` w.r.t. each array."""
    values = [np.array(v, dtype=np.float64, copy=True) for v in values]
    out = []
    for v in values:
        g = np.zeros_like(v)
        flat, gflat = v.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            hi = float(fn(*values))
            flat[k] = orig - eps
            lo = float(fn(*values))
            flat[k] = orig
            gflat[k] = (hi - lo) / (2.0 * eps)
        out.append(g)
    return out


def relative_error(analytic, numeric, floor=1e-6):
    """``||a - n|| / max(||a||, ||n||, floor)`` over the flattened arrays."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(build_loss, values, eps=1e-5):
    """Relative error between taped and finite-difference gradients.

    Both gradients are flattened and concatenated over all ``values``, so a
    parameter the loss ignores (exact zero gradient, pure rounding noise
    numerically) does not dominate the ratio.

    ``build_loss(*tensors_or_arrays)`` must return a scalar; it is called with
    watched tensors for the analytic pass and with plain arrays for the
    numerical pass.
    """
    tape = GradientTape()
    params = [tape.watch(v) for v in values]
    grads = backward(tape, build_loss(*params))
    numeric = numerical_gradient(lambda *vs: _value(build_loss(*vs)), values, eps)
    return relative_error(np.concatenate([grads[p].ravel() for p in params]),
                          np.concatenate([n.ravel() for n in numeric]))
