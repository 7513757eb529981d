"""A small tape-based reverse-mode autodiff over numpy arrays.

Operations record themselves on the innermost active :class:`Tape` (a
thread-local stack) when at least one input requires a gradient. With no
active tape nothing is recorded, which is how evaluation runs.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from pii_unlearn.numcore import kernels
from pii_unlearn.numcore.errors import ContractError, DimensionError, NumericError

DEFAULT_DTYPE = np.float32

_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """Value buffer plus an optional gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only defined by a constant")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of primitive operations for one backward pass."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], Backward]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], fn: Backward) -> None:
        self._nodes.append((out, inputs, fn))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf tensor that requires a gradient."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    outputs = {id(out) for out, _, _ in tape._nodes}
    if id(loss) not in outputs:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data)
            return
        raise ContractError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, fn in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in outputs:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi

    for key, t in leaves.items():
        g = grads[key]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {t.name or 'tensor'}")
        t.grad = g.astype(t.dtype, copy=False)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], fn: Backward) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.dtype), (a,), lambda g: (g * pos,))


def gelu(a: Tensor) -> Tensor:
    x = np.ascontiguousarray(a.data)
    return _make(kernels.gelu_fwd(x), (a,), lambda g: (kernels.gelu_bwd(x, np.ascontiguousarray(g)),))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# shape
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        idx = [slice(None)] * g.ndim
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            parts.append(g[tuple(idx)])
        return parts

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor (or leading-axis entries of any tensor)."""
    rows = np.asarray(rows)

    def fn(g):
        flat = rows.reshape(-1)
        g2 = g.reshape(flat.shape[0], *a.shape[1:])
        order = np.argsort(flat, kind="stable")
        uniq, starts = np.unique(flat[order], return_index=True)
        out = np.zeros_like(a.data)
        out[uniq] = np.add.reduceat(g2[order], starts, axis=0)
        return (out,)

    return _make(a.data[rows], (a,), fn)


embedding = take_rows


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.dtype.type(a.size)
    return _make(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.broadcast_to(g / n, a.shape).copy(),),
    )


def weighted_sum(a: Tensor, w: np.ndarray) -> Tensor:
    """Scalar sum of ``a * w`` for a constant weight array ``w``."""
    w = np.asarray(w, dtype=a.dtype)
    if w.shape != a.shape:
        raise DimensionError(f"weight shape {w.shape} does not match {a.shape}")
    return _make(np.asarray((a.data * w).sum(), dtype=a.dtype), (a,), lambda g: (g * w,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), fn)


def linear(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    lora_a: Tensor | None = None,
    lora_b: Tensor | None = None,
    lora_scale: float = 0.0,
    lora_dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """``x @ W.T + b`` with W stored (out, in), plus an optional low-rank branch.

    The low-rank branch adds ``lora_scale * (x @ A.T) @ B.T`` which equals
    using ``W + lora_scale * B @ A`` as the weight.
    """
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear input width {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ weight.data.T
    if bias is not None:
        y = y + bias.data
    use_lora = lora_a is not None and lora_b is not None and lora_scale != 0.0
    inputs: list[Tensor] = [x, weight]
    if bias is not None:
        inputs.append(bias)
    keep = None
    if use_lora:
        inputs += [lora_a, lora_b]
        xl = x2
        if lora_dropout > 0.0 and rng is not None:
            keep = (rng.random(x2.shape) >= lora_dropout).astype(x2.dtype) / x2.dtype.type(1.0 - lora_dropout)
            xl = x2 * keep
        s = x2.dtype.type(lora_scale)
        h = xl @ lora_a.data.T
        y = y + s * (h @ lora_b.data.T)

    def fn(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g2 @ weight.data if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        grads = [None, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        if use_lora:
            gh = s * (g2 @ lora_b.data)
            ga = gh.T @ xl if lora_a.requires_grad else None
            gb = s * (g2.T @ h) if lora_b.requires_grad else None
            grads += [ga, gb]
            if x.requires_grad:
                gxl = gh @ lora_a.data
                gx = gx + (gxl * keep if keep is not None else gxl)
        grads[0] = gx.reshape(x.shape) if gx is not None else None
        return grads

    return _make(y.reshape(*lead, weight.shape[0]), tuple(inputs), fn)


# ---------------------------------------------------------------------------
# normalisation / attention / losses
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y, xhat, rstd = kernels.layernorm_fwd(x2, gamma.data, beta.data, eps)

    def fn(g):
        dx, dg, db = kernels.layernorm_bwd(np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dg, db

    return _make(y.reshape(x.shape), (x, gamma, beta), fn)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with row-max subtraction."""
    _check_finite(x.data, "softmax input")
    v = x.shape[-1]
    y = kernels.softmax_rows(np.ascontiguousarray(x.data.reshape(-1, v))).reshape(x.shape)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), fn)


def log_softmax_rows(x: Tensor) -> Tensor:
    _check_finite(x.data, "log-softmax input")
    v = x.shape[-1]
    y = kernels.log_softmax_rows(np.ascontiguousarray(x.data.reshape(-1, v))).reshape(x.shape)

    def fn(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), fn)


def cross_entropy_tokenwise(logits: Tensor, targets) -> Tensor:
    """Per-row ``-log softmax(logits)[target]`` with no reduction."""
    if logits.ndim != 2:
        raise DimensionError(f"expected (n, V) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} != ({n},)")
    if n and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"target id outside [0, {v})")
    _check_finite(logits.data, "logits")
    loss, probs = kernels.cross_entropy_fwd(np.ascontiguousarray(logits.data), targets)

    def fn(g):
        return (kernels.cross_entropy_bwd(probs, targets, np.ascontiguousarray(g)),)

    return _make(loss, (logits,), fn)


def causal_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Multi-head causal self-attention over (B, T, d) projections."""
    bsz, t, d = q.shape
    if d % n_heads:
        raise DimensionError(f"width {d} not divisible by {n_heads} heads")
    hd = d // n_heads
    sc = q.dtype.type(1.0 / np.sqrt(hd))

    def split(a):
        return a.reshape(bsz, t, n_heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * sc
    future = np.triu(np.ones((t, t), dtype=bool), k=1)
    scores[..., future] = -np.inf
    w = kernels.softmax_rows(np.ascontiguousarray(scores.reshape(-1, t))).reshape(scores.shape)
    out = (w @ vh).transpose(0, 2, 1, 3).reshape(bsz, t, d)

    def fn(g):
        gh = g.reshape(bsz, t, n_heads, hd).transpose(0, 2, 1, 3)
        gw = gh @ vh.transpose(0, 1, 3, 2)
        gv = w.transpose(0, 1, 3, 2) @ gh
        gs = w * (gw - (gw * w).sum(axis=-1, keepdims=True)) * sc
        gq = gs @ kh
        gk = gs.transpose(0, 1, 3, 2) @ qh

        def merge(a):
            return a.transpose(0, 2, 1, 3).reshape(bsz, t, d)

        return merge(gq), merge(gk), merge(gv)

    return _make(out, (q, k, v), fn)
