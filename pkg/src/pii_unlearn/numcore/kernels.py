"""Row-wise numeric kernels.

Every kernel exists twice: a pure-numpy version (``np_*``) and a numba
``@njit`` version (``nb_*``). The public names bound at the bottom of the
module pick one of the two at import time. Set ``PII_UNLEARN_DISABLE_NUMBA=1``
to force the numpy path (or when numba is not importable).
"""

from __future__ import annotations

import math
import os

import numpy as np

DISABLE_ENV = "PII_UNLEARN_DISABLE_NUMBA"

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco(args[0]) if args and callable(args[0]) else deco


def numba_requested() -> bool:
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and numba_requested()

_GELU_C = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def np_softmax_rows(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def np_log_softmax_rows(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def np_cross_entropy_fwd(logits, targets):
    """Per-row CE and the softmax probabilities (kept for the backward pass)."""
    logp = np_log_softmax_rows(logits)
    rows = np.arange(logits.shape[0])
    loss = -logp[rows, targets]
    return loss, np.exp(logp)


def np_cross_entropy_bwd(probs, targets, grad_loss):
    d = probs * grad_loss[:, None]
    d[np.arange(probs.shape[0]), targets] -= grad_loss
    return d


def np_layernorm_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd[:, 0]


def np_layernorm_bwd(dy, xhat, rstd, gamma):
    n = xhat.shape[1]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = (rstd[:, None] / n) * (
        n * dxhat - dxhat.sum(axis=1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx.astype(xhat.dtype, copy=False), dgamma, dbeta


def np_gelu_fwd(x):
    c = x.dtype.type(_GELU_C)
    inner = c * (x + x.dtype.type(0.044715) * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def np_gelu_bwd(x, dy):
    c = x.dtype.type(_GELU_C)
    x2 = x * x
    t = np.tanh(c * (x + x.dtype.type(0.044715) * x2 * x))
    dinner = c * (1.0 + x.dtype.type(3 * 0.044715) * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def np_levenshtein(a, b):
    """Edit distance between two int arrays, one DP row at a time."""
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    if b.shape[0] == 0:
        return int(a.shape[0])
    prev = np.arange(b.shape[0] + 1, dtype=np.int64)
    for ch in a:
        cur = prev + 1
        cur[1:] = np.minimum(cur[1:], prev[:-1] + (b != ch))
        # deletions chain left to right; a running minimum of (cur[j] - j) resolves them
        idx = np.arange(cur.shape[0], dtype=np.int64)
        cur = np.minimum.accumulate(cur - idx) + idx
        prev = cur
    return int(prev[-1])


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def nb_softmax_rows(x):
    n, v = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, v):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(v):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(v):
            out[i, j] *= inv
    return out


@njit(cache=True)
def nb_log_softmax_rows(x):
    n, v = x.shape
    out = np.empty_like(x)
    for i in range(n):
        m = x[i, 0]
        for j in range(1, v):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(v):
            s += math.exp(x[i, j] - m)
        lse = m + math.log(s)
        for j in range(v):
            out[i, j] = x[i, j] - lse
    return out


@njit(cache=True)
def nb_cross_entropy_fwd(logits, targets):
    n, v = logits.shape
    loss = np.empty(n, dtype=logits.dtype)
    probs = np.empty_like(logits)
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(v):
            s += math.exp(logits[i, j] - m)
        lse = m + math.log(s)
        for j in range(v):
            probs[i, j] = math.exp(logits[i, j] - lse)
        loss[i] = lse - logits[i, targets[i]]
    return loss, probs


@njit(cache=True)
def nb_cross_entropy_bwd(probs, targets, grad_loss):
    n, v = probs.shape
    d = np.empty_like(probs)
    for i in range(n):
        g = grad_loss[i]
        for j in range(v):
            d[i, j] = probs[i, j] * g
        d[i, targets[i]] -= g
    return d


@njit(cache=True)
def nb_layernorm_fwd(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    rstd = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, rstd


@njit(cache=True)
def nb_layernorm_bwd(dy, xhat, rstd, gamma):
    n, d = xhat.shape
    dx = np.empty_like(xhat)
    dgamma = np.zeros(d, dtype=xhat.dtype)
    dbeta = np.zeros(d, dtype=xhat.dtype)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            g = dy[i, j] * gamma[j]
            s1 += g
            s2 += g * xhat[i, j]
            dgamma[j] += dy[i, j] * xhat[i, j]
            dbeta[j] += dy[i, j]
        r = rstd[i] / d
        for j in range(d):
            g = dy[i, j] * gamma[j]
            dx[i, j] = r * (d * g - s1 - xhat[i, j] * s2)
    return dx, dgamma, dbeta


@njit(cache=True)
def nb_gelu_fwd(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        out[i] = 0.5 * v * (1.0 + math.tanh(_GELU_C * (v + 0.044715 * v * v * v)))
    return out.reshape(x.shape)


@njit(cache=True)
def nb_gelu_bwd(x, dy):
    flat = x.ravel()
    gflat = dy.ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        t = math.tanh(_GELU_C * (v + 0.044715 * v * v * v))
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        out[i] = gflat[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
    return out.reshape(x.shape)


@njit(cache=True)
def nb_levenshtein(a, b):
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    m = b.shape[0]
    if m == 0:
        return a.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(a.shape[0]):
        cur[0] = i + 1
        ai = a[i]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if b[j - 1] == ai else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[m]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

# Kernels where the numba loop beats numpy on this workload (see
# benchmarks/bench_kernels.py). Without SVML, numba evaluates exp/tanh one
# scalar at a time, so the transcendental-heavy kernels stay on numpy.
DISPATCH_NUMBA = {
    "softmax_rows": False,
    "log_softmax_rows": False,
    "cross_entropy_fwd": False,
    "cross_entropy_bwd": True,
    "layernorm_fwd": True,
    "layernorm_bwd": True,
    "gelu_fwd": False,
    "gelu_bwd": False,
    "levenshtein": True,
}


def _pick(name):
    use = USE_NUMBA and DISPATCH_NUMBA[name]
    return globals()[("nb_" if use else "np_") + name]


softmax_rows = _pick("softmax_rows")
log_softmax_rows = _pick("log_softmax_rows")
cross_entropy_fwd = _pick("cross_entropy_fwd")
cross_entropy_bwd = _pick("cross_entropy_bwd")
layernorm_fwd = _pick("layernorm_fwd")
layernorm_bwd = _pick("layernorm_bwd")
gelu_fwd = _pick("gelu_fwd")
gelu_bwd = _pick("gelu_bwd")
_levenshtein_impl = _pick("levenshtein")


def levenshtein_codes(a: np.ndarray, b: np.ndarray) -> int:
    return int(_levenshtein_impl(a, b))


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
