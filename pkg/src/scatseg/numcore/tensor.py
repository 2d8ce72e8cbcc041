"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (entered with a
``with`` block). Outside a tape, or when no input requires a gradient, ops run
as plain numpy and leave no trace, which is how frozen-parameter inference
works.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(w, w))
    ...     tape.backward(loss)
    >>> w.grad
    array([[2., 4.]])
"""
from __future__ import annotations

import contextvars
import itertools
import math

import numpy as np

from .. import kernels
from ..errors import DimensionError, LabelError, NumericError, ShapeError

_active_tape: contextvars.ContextVar = contextvars.ContextVar("scat_tape", default=None)


class Tensor:
    """A float64 array that may carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_tape", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in self.data.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {self.data.shape}")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node_id = None
        self._tape = None
        self.name = name

    @classmethod
    def _wrap(cls, arr):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t._tape = None
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


class _Op:
    __slots__ = ("out", "ins", "needs", "backward", "kind")

    def __init__(self, out, ins, needs, backward, kind):
        self.out = out
        self.ins = ins
        self.needs = needs
        self.backward = backward
        self.kind = kind


class Tape:
    """Ordered record of differentiable operations.

    Node ids are assigned in creation order, so every op's inputs carry
    smaller ids than its output and the list is topologically sorted.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self._ids = itertools.count()
        self._leaf_ids: dict[int, int] = {}
        self._leaves: dict[int, Tensor] = {}
        self._token = None

    def __enter__(self):
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.ops)

    def _node(self, t: Tensor) -> int:
        if t._tape is self:
            return t.node_id
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = next(self._ids)
            self._leaf_ids[key] = nid
            self._leaves[nid] = t
            t.node_id = nid
        return nid

    def record(self, out: Tensor, inputs, needs, backward, kind=""):
        ins = tuple(self._node(t) for t in inputs)
        out.node_id = next(self._ids)
        out._tape = self
        out.requires_grad = True
        self.ops.append(_Op(out.node_id, ins, needs, backward, kind))

    @property
    def leaves(self):
        return list(self._leaves.values())

    def backward(self, loss: Tensor, params=None):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf.

        Leaves that were used on this tape but do not influence ``loss``, and
        any extra ``params`` never touched by it, receive zero gradients.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {}
        if loss._tape is self:
            grads[loss.node_id] = np.ones_like(loss.data)
        for op in reversed(self.ops):
            g = grads.pop(op.out, None)
            if g is None:
                continue
            in_grads = op.backward(g, op.needs)
            for nid, need, gi in zip(op.ins, op.needs, in_grads):
                if not need or gi is None:
                    continue
                prev = grads.get(nid)
                grads[nid] = gi if prev is None else prev + gi
        for nid, leaf in self._leaves.items():
            if not leaf.requires_grad:
                continue
            g = grads.get(nid)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = np.array(g, dtype=np.float64) if leaf.grad is None else leaf.grad + g
        for p in params or ():
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def backward(loss: Tensor, params=None):
    """Run reverse mode on the tape that produced ``loss``."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        # constant loss: nothing on a tape depends on it
        for p in params or ():
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)
        return
    tape.backward(loss, params)


def _emit(data, inputs, backward, kind=""):
    out = Tensor._wrap(data)
    tape = _active_tape.get()
    if tape is None:
        return out
    needs = tuple(t.requires_grad for t in inputs)
    if not any(needs):
        return out
    tape.record(out, inputs, needs, backward, kind)
    return out


def _check_2d(name, *ts):
    for t in ts:
        if t.data.ndim != 2:
            raise DimensionError(f"{name} expects 2-D tensors, got shape {t.shape}")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g, needs):
        return (g @ B.T if needs[0] else None, A.T @ g if needs[1] else None)

    return _emit(A @ B, (a, b), bw, "matmul")


def transpose(x):
    x = as_tensor(x)
    _check_2d("transpose", x)
    return _emit(x.data.T.copy(), (x,), lambda g, n: (g.T,), "transpose")


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g, n: (g, g), "add")


def add_bias(x, b):
    """Add a length-d row vector to every row of an N x d matrix."""
    x, b = as_tensor(x), as_tensor(b)
    _check_2d("add_bias", x)
    if b.data.shape != (x.shape[1],):
        raise DimensionError(f"bias of shape {b.shape} does not fit rows of {x.shape}")
    return _emit(x.data + b.data, (x, b), lambda g, n: (g, g.sum(axis=0)), "add_bias")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _emit(x.data * c, (x,), lambda g, n: (g * c,), "scale")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g, n: (g * B, g * A), "mul")


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)
    return _emit(out, (x,), lambda g, n: (np.where(pos, g, slope * g),), "leaky_relu")


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    _check_2d("concat_rows", *parts)
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows column mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g, needs):
        return tuple(g[bounds[i]:bounds[i + 1]] if needs[i] else None for i in range(len(needs)))

    return _emit(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bw, "concat_rows")


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat_cols needs at least one tensor")
    _check_2d("concat_cols", *parts)
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g, needs):
        return tuple(g[:, bounds[i]:bounds[i + 1]] if needs[i] else None for i in range(len(needs)))

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bw, "concat_cols")


def slice_rows(x, start, stop):
    x = as_tensor(x)
    n = x.shape[0]

    def bw(g, needs):
        full = np.zeros((n,) + g.shape[1:])
        full[start:stop] = g
        return (full,)

    return _emit(x.data[start:stop].copy(), (x,), bw, "slice_rows")


def slice_cols(x, start, stop):
    x = as_tensor(x)
    _check_2d("slice_cols", x)
    n, d = x.shape

    def bw(g, needs):
        full = np.zeros((n, d))
        full[:, start:stop] = g
        return (full,)

    return _emit(x.data[:, start:stop].copy(), (x,), bw, "slice_cols")


def gather_rows(x, idx):
    """Rows of ``x`` at integer positions ``idx`` (repeats allowed)."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    return _emit(x.data[idx], (x,), lambda g, needs: (kernels.index_add_rows(g, idx, n),), "gather_rows")


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _emit(np.array(x.data.sum()), (x,), lambda g, n: (np.full(shape, float(g)),), "sum")


def mean_rows(x):
    """Column means as a 1 x d matrix."""
    x = as_tensor(x)
    _check_2d("mean_rows", x)
    n = x.shape[0]
    return _emit(x.data.mean(axis=0, keepdims=True), (x,),
                 lambda g, needs: (np.broadcast_to(g / n, x.shape).copy(),), "mean_rows")


def normalize_rows(x, eps=1e-12):
    """Scale every row to unit L2 norm (rows with norm below ``eps`` divide by ``eps``)."""
    x = as_tensor(x)
    _check_2d("normalize_rows", x)
    norm = np.maximum(np.sqrt((x.data * x.data).sum(axis=1, keepdims=True)), eps)
    y = x.data / norm

    def bw(g, needs):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _emit(y, (x,), bw, "normalize_rows")


def elementwise(op_kind, x, y=None, **kw):
    """Dispatch by name: ``add``, ``scale``, ``leaky_relu``, ``concat_rows``, ``mul``."""
    if op_kind == "add":
        return add(x, y)
    if op_kind == "mul":
        return mul(x, y)
    if op_kind == "scale":
        return scale(x, kw.get("c", y))
    if op_kind == "leaky_relu":
        return leaky_relu(x, kw.get("slope", 0.2))
    if op_kind == "concat_rows":
        return concat_rows(x if y is None else [x, y])
    raise ValueError(f"unknown elementwise op {op_kind!r}")


# ---------------------------------------------------------------- softmax family

def _softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_rows(x):
    x = as_tensor(x)
    _check_2d("softmax_rows", x)
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows received NaN input")
    y = _softmax(x.data)

    def bw(g, needs):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (x,), bw, "softmax_rows")


def cross_entropy(logits, labels):
    """Mean over rows of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    _check_2d("cross_entropy", logits)
    z = logits.data
    n, w = z.shape
    if w < 2:
        raise DimensionError(f"cross_entropy needs at least 2 classes, got {w}")
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match {n} rows")
    bad = np.flatnonzero((labels < 0) | (labels >= w))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {labels[i]} at index {i} outside [0, {w})")
    if np.isnan(z).any():
        raise NumericError("cross_entropy received NaN logits")
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    # clamp tiny negative rounding so the loss stays non-negative
    loss = max(float(np.mean(logsum - picked)), 0.0)

    def bw(g, needs):
        p = _softmax(z)
        p[np.arange(n), labels] -= 1.0
        return (p * (float(g) / n),)

    return _emit(np.array(loss), (logits,), bw, "cross_entropy")


# ---------------------------------------------------------------- fused kernels

def neighbor_max(x, nbr):
    """``out[i] = max_j x[nbr[i, j]]`` per channel; gradient goes to the winner."""
    x = as_tensor(x)
    _check_2d("neighbor_max", x)
    n = x.shape[0]
    out, src = kernels.neighbor_max(x.data, nbr)
    return _emit(out, (x,), lambda g, needs: (kernels.scatter_cols(g, src, n),), "neighbor_max")


def attention(q, k, v, heads, return_weights=False):
    """Multi-head scaled dot-product attention.

    ``q`` is N x Da, ``k`` and ``v`` are M x Da. Channels are split into
    ``heads`` contiguous groups of width Da/heads; per head the scores are
    q_h k_h^T / sqrt(Da/heads), row-softmaxed over the M keys, then applied to
    v_h. Head outputs are concatenated back in order (N x Da).
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    _check_2d("attention", q, k, v)
    n, da = q.shape
    m = k.shape[0]
    if k.shape[1] != da or v.shape != k.shape:
        raise DimensionError(f"attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if da % heads:
        raise DimensionError(f"attention width {da} not divisible by {heads} heads")
    dk = da // heads
    inv = 1.0 / math.sqrt(dk)
    Q = q.data.reshape(n, heads, dk).transpose(1, 0, 2)
    K = k.data.reshape(m, heads, dk).transpose(1, 0, 2)
    V = v.data.reshape(m, heads, dk).transpose(1, 0, 2)
    A = Q @ K.transpose(0, 2, 1)                         # H x N x M
    A *= inv
    A -= A.max(axis=-1, keepdims=True)
    np.exp(A, out=A)
    A /= A.sum(axis=-1, keepdims=True)
    out = (A @ V).transpose(1, 0, 2).reshape(n, da)

    def bw(g, needs):
        G = g.reshape(n, heads, dk).transpose(1, 0, 2)
        dS = G @ V.transpose(0, 2, 1)
        row = np.einsum("hnm,hnm->hn", dS, A)[..., None]
        dS -= row
        dS *= A
        dS *= inv
        dq = (dS @ K).transpose(1, 0, 2).reshape(n, da) if needs[0] else None
        dk_ = (dS.transpose(0, 2, 1) @ Q).transpose(1, 0, 2).reshape(m, da) if needs[1] else None
        dv = (A.transpose(0, 2, 1) @ G).transpose(1, 0, 2).reshape(m, da) if needs[2] else None
        return dq, dk_, dv

    res = _emit(out, (q, k, v), bw, "attention")
    return (res, A) if return_weights else res
