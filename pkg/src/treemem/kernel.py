"""Dense float64 linear algebra with reverse-mode gradients.

Values are numpy float64 arrays wrapped in :class:`Var`.  While a tape is
active (see :func:`recording`) every operation appends its result node to
the tape; ``Tape.backward`` then walks the tape once in reverse, calling
each node's vector-Jacobian product.  Without an active tape the same
functions compute values only, so inference pays no gradient bookkeeping.

All arithmetic is 64-bit; gradient agreement with central finite
differences at 1e-4 relative tolerance is not achievable in 32-bit.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import NumericalError

# Scores equal to this value are forced to exactly zero weight by softmax.
MASK_SENTINEL = -np.finfo(np.float64).max

_tls = threading.local()


def _tape():
    return getattr(_tls, "tape", None)


class Var:
    """A float64 array participating in a recorded computation."""

    __slots__ = ("data", "grad", "vjp")

    def __init__(self, data, vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __repr__(self):
        return f"Var({self.data!r})"

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


class Tape:
    """Creation-ordered record of one evaluation; order doubles as a topo sort."""

    def __init__(self):
        self.nodes: list[Var] = []

    def backward(self, loss: Var) -> None:
        """Accumulate ``grad`` on every recorded node reachable from ``loss``."""
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            if node.grad is None or node.vjp is None:
                continue
            for parent, contrib in node.vjp(node.grad):
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    parent.grad = parent.grad + contrib


@contextmanager
def recording():
    """Activate a fresh tape on this thread; yields it for backward()."""
    tape = Tape()
    prev = getattr(_tls, "tape", None)
    _tls.tape = tape
    try:
        yield tape
    finally:
        _tls.tape = prev


def _d(x):
    return x.data if isinstance(x, Var) else x


def _emit(data, vjp):
    tape = _tape()
    if tape is None:
        return Var(data)
    node = Var(data, vjp)
    tape.nodes.append(node)
    return node


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    av, bv = _d(a), _d(b)
    out = av + bv
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if isinstance(a, Var):
            contribs.append((a, _unbroadcast(g, np.shape(av))))
        if isinstance(b, Var):
            contribs.append((b, _unbroadcast(g, np.shape(bv))))
        return contribs

    return _emit(out, vjp)


def sub(a, b):
    av, bv = _d(a), _d(b)
    out = av - bv
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if isinstance(a, Var):
            contribs.append((a, _unbroadcast(g, np.shape(av))))
        if isinstance(b, Var):
            contribs.append((b, _unbroadcast(-g, np.shape(bv))))
        return contribs

    return _emit(out, vjp)


def mul(a, b):
    av, bv = _d(a), _d(b)
    out = av * bv
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if isinstance(a, Var):
            contribs.append((a, _unbroadcast(g * bv, np.shape(av))))
        if isinstance(b, Var):
            contribs.append((b, _unbroadcast(g * av, np.shape(bv))))
        return contribs

    return _emit(out, vjp)


def matmul(a, b):
    """a @ b for (2-D, 2-D), (2-D, 1-D) and (1-D, 2-D) operand shapes."""
    av, bv = _d(a), _d(b)
    if av.shape[-1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = av @ bv
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if av.ndim == 2 and bv.ndim == 2:
            if isinstance(a, Var):
                contribs.append((a, g @ bv.T))
            if isinstance(b, Var):
                contribs.append((b, av.T @ g))
        elif av.ndim == 2 and bv.ndim == 1:
            if isinstance(a, Var):
                contribs.append((a, np.outer(g, bv)))
            if isinstance(b, Var):
                contribs.append((b, av.T @ g))
        elif av.ndim == 1 and bv.ndim == 2:
            if isinstance(a, Var):
                contribs.append((a, bv @ g))
            if isinstance(b, Var):
                contribs.append((b, np.outer(av, g)))
        else:
            raise ValueError(f"unsupported matmul ranks: {av.ndim}, {bv.ndim}")
        return contribs

    return _emit(out, vjp)


def outer(u, v):
    uv, vv = _d(u), _d(v)
    out = np.outer(uv, vv)
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if isinstance(u, Var):
            contribs.append((u, g @ vv))
        if isinstance(v, Var):
            contribs.append((v, uv @ g))
        return contribs

    return _emit(out, vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def _require_finite(x, op):
    if not np.isfinite(x).all():
        raise NumericalError(f"{op}: non-finite input")


def sigmoid(v):
    x = _d(v)
    _require_finite(x, "sigmoid")
    y = expit(x)
    if _tape() is None or not isinstance(v, Var):
        return Var(y)
    return _emit(y, lambda g: [(v, g * y * (1.0 - y))])


def tanh(v):
    x = _d(v)
    _require_finite(x, "tanh")
    y = np.tanh(x)
    if _tape() is None or not isinstance(v, Var):
        return Var(y)
    return _emit(y, lambda g: [(v, g * (1.0 - y * y))])


def relu(v):
    x = _d(v)
    _require_finite(x, "relu")
    y = np.maximum(x, 0.0)
    if _tape() is None or not isinstance(v, Var):
        return Var(y)
    mask = x > 0.0
    return _emit(y, lambda g: [(v, g * mask)])


def softmax(v):
    """Probability vector via max-subtracted exponentials.

    Entries equal to :data:`MASK_SENTINEL` come out exactly zero; raises if
    every entry is masked (no probability mass to assign).
    """
    x = _d(v)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"softmax expects a nonempty vector, got shape {x.shape}")
    _require_finite(x, "softmax")
    m = x.max()
    if m == MASK_SENTINEL:
        raise NumericalError("softmax: all entries masked")
    e = np.exp(x - m)
    y = e / e.sum()
    if _tape() is None or not isinstance(v, Var):
        return Var(y)

    def vjp(g):
        return [(v, y * (g - np.dot(g, y)))]

    return _emit(y, vjp)


# ---------------------------------------------------------------------------
# shape plumbing


def concat(parts: Sequence, axis: int = 0):
    datas = [_d(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    if _tape() is None:
        return Var(out)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        contribs = []
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(part, Var):
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                contribs.append((part, g[tuple(index)]))
        return contribs

    return _emit(out, vjp)


def stack_cols(vecs: Sequence):
    """Stack 1-D vectors as the columns of a matrix."""
    datas = [_d(v) for v in vecs]
    out = np.stack(datas, axis=1)
    if _tape() is None:
        return Var(out)

    def vjp(g):
        return [(v, g[:, j]) for j, v in enumerate(vecs) if isinstance(v, Var)]

    return _emit(out, vjp)


def tile_cols(v, n: int):
    """Repeat a vector as n identical columns."""
    x = _d(v)
    out = np.repeat(x[:, None], n, axis=1)
    if _tape() is None or not isinstance(v, Var):
        return Var(out)
    return _emit(out, lambda g: [(v, g.sum(axis=1))])


def fill(s, n: int):
    """Broadcast a scalar to an n-vector."""
    x = _d(s)
    out = np.full(n, float(x))
    if _tape() is None or not isinstance(s, Var):
        return Var(out)
    return _emit(out, lambda g: [(s, np.asarray(g.sum()))])


def total(v):
    """Sum of all entries, as a 0-d value."""
    x = _d(v)
    out = np.asarray(x.sum())
    if _tape() is None or not isinstance(v, Var):
        return Var(out)
    return _emit(out, lambda g: [(v, np.broadcast_to(g, x.shape))])


def reshape(v, shape):
    x = _d(v)
    out = x.reshape(shape)
    if _tape() is None or not isinstance(v, Var):
        return Var(out)
    return _emit(out, lambda g: [(v, g.reshape(x.shape))])


def split(v, n_parts: int):
    """Split a vector into n equal consecutive chunks."""
    x = _d(v)
    if x.shape[0] % n_parts:
        raise ValueError(f"cannot split length {x.shape[0]} into {n_parts} parts")
    size = x.shape[0] // n_parts
    return tuple(_slice1d(v, x, i * size, (i + 1) * size) for i in range(n_parts))


def _slice1d(v, x, lo, hi):
    out = x[lo:hi]
    if _tape() is None or not isinstance(v, Var):
        return Var(out)

    def vjp(g):
        full = np.zeros_like(x)
        full[lo:hi] = g
        return [(v, full)]

    return _emit(out, vjp)


def mask_fill(v, keep, value):
    """Replace entries where ``keep`` is False with a constant."""
    x = _d(v)
    keep = np.asarray(keep, dtype=bool)
    out = np.where(keep, x, value)
    if _tape() is None or not isinstance(v, Var):
        return Var(out)
    return _emit(out, lambda g: [(v, g * keep)])


def set_col(m, j: int, v):
    """Matrix with column j replaced by vector v."""
    mv, vv = _d(m), _d(v)
    out = mv.copy()
    out[:, j] = vv
    if _tape() is None:
        return Var(out)

    def vjp(g):
        contribs = []
        if isinstance(m, Var):
            gm = g.copy()
            gm[:, j] = 0.0
            contribs.append((m, gm))
        if isinstance(v, Var):
            contribs.append((v, g[:, j]))
        return contribs

    return _emit(out, vjp)


# ---------------------------------------------------------------------------
# finite-difference oracle


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    The oracle deliberately knows nothing about the tape: it only calls ``f``
    at perturbed points, so it stays independent of the analytic path.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    work = theta.copy()
    flat = work.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(work))
        flat[i] = orig - h
        f_minus = float(f(work))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(f"finite_difference_gradient: non-finite value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(theta.shape)
