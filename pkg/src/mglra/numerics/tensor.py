"""Dense float64 tensors with a minimal reverse-mode tape.

Every op returns a new :class:`Tensor`; when gradient recording is enabled and
any input requires a gradient, the output keeps references to its parents and a
closure mapping the output gradient to one gradient per parent.
:meth:`Tensor.backward` walks that graph in reverse topological order and then
drops the references, so each training step starts from an empty tape.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Optional, Sequence

import math

import numpy as np
import scipy.sparse as sp

_GRAD_ENABLED = contextvars.ContextVar("mglra_grad_enabled", default=True)


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


@contextlib.contextmanager
def no_grad():
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if not _all_finite(arr):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``.grad`` on every leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # clear the tape
        for node in topo:
            if node._backward is not None:
                node._parents = ()
                node._backward = None

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


_add_reduce = np.add.reduce


def _all_finite(arr: np.ndarray) -> bool:
    # any NaN or inf makes the sum non-finite, so a finite sum settles it in
    # one reduction; the entrywise test only runs when the sum is not finite
    if math.isfinite(_add_reduce(arr, None)):
        return True
    return bool(np.isfinite(arr).all())


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn, op: str) -> Tensor:
    if not _all_finite(data):
        raise NonFiniteError(f"op {op!r} produced a non-finite value")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    parents = tuple(parents)
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple:
    if a.data.shape == b.data.shape:
        return a.data.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _result(out, (a, b), backward, "div")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics (batched for >2-D, vector for 1-D ``b``)."""
    a, b = as_tensor(a), as_tensor(b)
    inner_b = b.shape[0] if b.ndim == 1 else (b.shape[-2] if b.ndim >= 2 else None)
    if a.ndim < 1 or inner_b is None or a.shape[-1] != inner_b:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    if bd.ndim == 1:
        def backward(g):
            ga = np.multiply.outer(g, bd)
            gb = (ad * g[..., None]).reshape(-1, bd.shape[0]).sum(axis=0)
            return ga, gb
    else:
        def backward(g):
            ga = g @ np.swapaxes(bd, -1, -2)
            if ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
            return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, (a, b), backward, "matmul")


# ----------------------------------------------------------------------------
# elementwise unary


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,), "relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    s = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _result(e, (x,), lambda g: (g * e,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(d)
    return _result(out, (x,), lambda g: (g / d,), "log")


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore"):
        r = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(r > 0, g * 0.5 / np.where(r > 0, r, 1.0), 0.0),)

    return _result(r, (x,), backward, "sqrt")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def arccos(x) -> Tensor:
    """arccos on ``[-1, 1]``. At the endpoints the gradient is taken as 0."""
    x = as_tensor(x)
    d = x.data
    if np.any(np.abs(d) > 1.0):
        raise ValueError("arccos: argument outside [-1, 1]")
    out = np.arccos(d)

    def backward(g):
        interior = np.abs(d) < 1.0
        denom = np.sqrt(np.where(interior, 1.0 - d * d, 1.0))
        return (np.where(interior, -g / denom, 0.0),)

    return _result(out, (x,), backward, "arccos")


def vector_angle(a, b) -> Tensor:
    """Angle in ``[0, pi]`` between matching rows of ``a`` and ``b``.

    Uses ``2 atan2(|a^ - b^|, |a^ + b^|)`` on the unit vectors, which stays
    accurate near 0 and pi where ``arccos`` of the cosine loses half the
    digits. Rows where either vector is zero get ``pi / 2``. The gradient is
    taken as 0 where the angle is 0 or pi and on zero rows.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"vector_angle: shapes {a.shape} and {b.shape} differ")
    na = np.linalg.norm(a.data, axis=-1, keepdims=True)
    nb = np.linalg.norm(b.data, axis=-1, keepdims=True)
    zero = ((na == 0.0) | (nb == 0.0))[..., 0]
    sa, sb = np.where(na == 0.0, 1.0, na), np.where(nb == 0.0, 1.0, nb)
    ua, ub = a.data / sa, b.data / sb
    theta = 2.0 * np.arctan2(np.linalg.norm(ua - ub, axis=-1), np.linalg.norm(ua + ub, axis=-1))
    theta = np.where(zero, 0.5 * np.pi, theta)

    def backward(g):
        sin = np.sin(theta)
        live = ~zero & (sin > 0.0)
        coef = np.where(live, g / np.where(live, sin, 1.0), 0.0)[..., None]
        cos = np.cos(theta)[..., None]
        return coef * (cos * ua - ub) / sa, coef * (cos * ub - ua) / sb

    return _result(theta, (a, b), backward, "vector_angle")


# ----------------------------------------------------------------------------
# reductions and normalisation


def sum_(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis`` with per-slice max subtraction.

    ``mask`` (boolean, broadcastable to ``x``) marks admissible entries;
    excluded entries get probability exactly zero. Every slice must keep at
    least one admissible entry.
    """
    x = as_tensor(x)
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, d.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax: a slice has no admissible entries")
        d = np.where(mask, d, -np.inf)
    shifted = d - np.max(d, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return _result(s, (x,), backward, "softmax")


def attention_heads(q_src, kv_src, w_q, w_k, w_v, n_heads: int, head_dim: int,
                    key_mask: Optional[np.ndarray] = None, scale: bool = False) -> Tensor:
    """Multi-head dot-product attention as one tape node.

    ``q_src`` is ``(..., T_Q, D)``, ``kv_src`` is ``(..., T_K, D)`` with the
    same leading shape, and each projection is ``(D, n_heads * head_dim)``
    with head ``i`` in columns ``i*head_dim:(i+1)*head_dim``. Returns the
    concatenated heads ``(..., T_Q, n_heads * head_dim)``. ``key_mask``
    (``(..., T_K)``, True = keep) excludes padded keys. Equivalent to
    composing matmul, reshape, transpose and softmax, with far fewer nodes.
    """
    q_src, kv_src, w_q, w_k, w_v = (as_tensor(t) for t in (q_src, kv_src, w_q, w_k, w_v))
    n, d = n_heads, head_dim
    width = n * d
    if (q_src.shape[-1] != w_q.shape[0] or kv_src.shape[-1] != w_k.shape[0] or kv_src.shape[-1] != w_v.shape[0]
            or not w_q.shape[1] == w_k.shape[1] == w_v.shape[1] == width):
        raise ShapeError(f"attention_heads: sources {q_src.shape}, {kv_src.shape} do not match projections "
                         f"{w_q.shape}, {w_k.shape}, {w_v.shape} for {n} heads of width {d}")
    lead, tq, tk = q_src.shape[:-2], q_src.shape[-2], kv_src.shape[-2]
    if kv_src.shape[:-2] != lead:
        raise ShapeError(f"attention_heads: leading shapes {lead} and {kv_src.shape[:-2]} differ")
    qd, kd = q_src.data, kv_src.data
    c = 1.0 / math.sqrt(d) if scale else 1.0

    def heads(x, t):  # (..., t, n*d) -> (..., n, t, d)
        return np.swapaxes(x.reshape(lead + (t, n, d)), -2, -3)

    def merge(x, t):  # (..., n, t, d) -> (..., t, n*d)
        return np.swapaxes(x, -2, -3).reshape(lead + (t, width))

    Q, K, V = heads(qd @ w_q.data, tq), heads(kd @ w_k.data, tk), heads(kd @ w_v.data, tk)
    scores = (Q @ np.swapaxes(K, -1, -2)) * c
    if key_mask is not None:
        keep = np.broadcast_to(np.asarray(key_mask, dtype=bool)[..., None, None, :], scores.shape)
        if not np.all(keep.any(axis=-1)):
            raise ValueError("attention_heads: a query has no admissible keys")
        scores = np.where(keep, scores, -np.inf)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    P = e / e.sum(axis=-1, keepdims=True)
    out = merge(P @ V, tq)

    def backward(g):
        gH = heads(g, tq)
        gP = gH @ np.swapaxes(V, -1, -2)
        gV = np.swapaxes(P, -1, -2) @ gH
        gS = P * (gP - np.sum(gP * P, axis=-1, keepdims=True)) * c
        gQ, gK = merge(gS @ K, tq), merge(np.swapaxes(gS, -1, -2) @ Q, tk)
        gV = merge(gV, tk)
        q2, k2 = qd.reshape(-1, qd.shape[-1]), kd.reshape(-1, kd.shape[-1])
        g_wq = q2.T @ gQ.reshape(-1, width)
        g_wk = k2.T @ gK.reshape(-1, width)
        g_wv = k2.T @ gV.reshape(-1, width)
        return gQ @ w_q.data.T, gK @ w_k.data.T + gV @ w_v.data.T, g_wq, g_wk, g_wv

    return _result(out, (q_src, kv_src, w_q, w_k, w_v), backward, "attention_heads")


# ----------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _result(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer)) for p in parts)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(np.array(x.data[index]), (x,), backward, "getitem")


def take_rows(x, idx: np.ndarray) -> Tensor:
    """Gather rows ``x[idx]`` along axis 0."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(x.data[idx], (x,), backward, "take_rows")


def segment_sum(x, seg: np.ndarray, n: int) -> Tensor:
    """Sum rows of ``x`` into ``n`` buckets: ``out[k] = sum(x[i] for seg[i] == k)``."""
    x = as_tensor(x)
    seg = np.asarray(seg, dtype=np.intp)
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, seg, x.data)
    return _result(out, (x,), lambda g: (g[seg],), "segment_sum")


def spmm(rows: np.ndarray, cols: np.ndarray, values, h, n: int) -> Tensor:
    """Sparse ``M @ h`` where ``M[rows[e], cols[e]] = values[e]`` (duplicates add).

    Differentiable in both ``values`` and ``h``.
    """
    values, h = as_tensor(values), as_tensor(h)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if h.shape[0] != n:
        raise ShapeError(f"spmm: operand has {h.shape[0]} rows, matrix is {n}x{n}")
    m = sp.csr_matrix((values.data, (rows, cols)), shape=(n, n))
    hd = h.data

    def backward(g):
        gv = np.einsum("ij,ij->i", g[rows], hd[cols])
        gh = m.T @ g
        return gv, gh

    return _result(m @ hd, (values, h), backward, "spmm")


def scatter_dense(rows: np.ndarray, cols: np.ndarray, values, n: int) -> Tensor:
    """Dense ``n x n`` matrix with ``values`` placed at ``(rows, cols)`` (duplicates add)."""
    values = as_tensor(values)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = np.zeros((n, n))
    np.add.at(out, (rows, cols), values.data)
    return _result(out, (values,), lambda g: (g[rows, cols],), "scatter_dense")
