"""Loop-bound numeric kernels.

Every kernel exists twice: a ``*_np`` version written with plain numpy and a
``*_nb`` version compiled with ``numba.njit``.  The public name is bound to the
numba version unless numba is missing or ``CURBSENSE_DISABLE_NUMBA`` is set to
a truthy value before this module is imported.  Both paths are kept
bit-compatible where the summation order allows it; ``benchmarks/`` compares
their speed.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("CURBSENSE_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED_BY_ENV = _FLAG in ("1", "true", "yes", "on")

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


USE_NUMBA = NUMBA_AVAILABLE and not NUMBA_DISABLED_BY_ENV


# ---------------------------------------------------------------------------
# centered moving average with truncated ends
# ---------------------------------------------------------------------------


def centered_mean_np(x: np.ndarray, length: int) -> np.ndarray:
    """Centered moving mean along axis 0; ends use the shorter in-range window."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    h = length // 2
    pad = [(h, h)] + [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, pad)
    acc = np.zeros_like(x)
    for k in range(length):
        acc = acc + xp[k : k + n]
    idx = np.arange(n)
    count = np.minimum(idx + h, n - 1) - np.maximum(idx - h, 0) + 1
    return acc / count.reshape((n,) + (1,) * (x.ndim - 1))


@njit(cache=True)
def _centered_mean_2d(x, length):
    n, m = x.shape
    h = length // 2
    out = np.empty((n, m))
    for i in range(n):
        lo = i - h
        cnt = 0
        for k in range(length):
            j = lo + k
            if 0 <= j < n:
                cnt += 1
        for c in range(m):
            acc = 0.0
            for k in range(length):
                j = lo + k
                if 0 <= j < n:
                    acc += x[j, c]
                else:
                    acc += 0.0
            out[i, c] = acc / cnt
    return out


def centered_mean_nb(x: np.ndarray, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    flat = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    return _centered_mean_2d(flat, length).reshape(x.shape)


# ---------------------------------------------------------------------------
# one-pole low-pass recursion  y[n] = b * x[n] + c * y[n-1]
# ---------------------------------------------------------------------------


def onepole_np(x: np.ndarray, alpha: float) -> np.ndarray:
    from scipy.signal import lfilter

    return lfilter([alpha], [1.0, -(1.0 - alpha)], np.asarray(x, dtype=np.float64))


@njit(cache=True)
def _onepole(x, b, c):
    out = np.empty_like(x)
    y = 0.0
    for i in range(x.shape[0]):
        y = b * x[i] + c * y
        out[i] = y
    return out


def onepole_nb(x: np.ndarray, alpha: float) -> np.ndarray:
    return _onepole(np.ascontiguousarray(x, dtype=np.float64), float(alpha), 1.0 - float(alpha))


# ---------------------------------------------------------------------------
# max pooling over axis 1 of time-major (B, L, C) tensors
# ---------------------------------------------------------------------------


def maxpool_forward_np(x: np.ndarray, pool: int, stride: int):
    lout = (x.shape[1] - pool) // stride + 1
    if pool == stride:
        win = x[:, : lout * pool].reshape(x.shape[0], lout, pool, x.shape[2])
    else:
        win = np.lib.stride_tricks.sliding_window_view(x, pool, axis=1)[:, ::stride][:, :lout]
        win = win.transpose(0, 1, 3, 2)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0]
    idx = arg + (np.arange(lout) * stride)[None, :, None]
    return np.ascontiguousarray(out), idx.astype(np.int64)


@njit(cache=True)
def _maxpool_fwd(x, pool, stride, lout):
    b, _, c = x.shape
    out = np.empty((b, lout, c), dtype=x.dtype)
    idx = np.empty((b, lout, c), dtype=np.int64)
    for i in range(b):
        for o in range(lout):
            s = o * stride
            for j in range(c):
                out[i, o, j] = x[i, s, j]
                idx[i, o, j] = s
            for k in range(1, pool):
                for j in range(c):
                    v = x[i, s + k, j]
                    if v > out[i, o, j]:
                        out[i, o, j] = v
                        idx[i, o, j] = s + k
    return out, idx


def maxpool_forward_nb(x: np.ndarray, pool: int, stride: int):
    lout = (x.shape[1] - pool) // stride + 1
    return _maxpool_fwd(np.ascontiguousarray(x), pool, stride, lout)


def maxpool_backward_np(grad: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    b, _, c = grad.shape
    dx = np.zeros((b, length, c), dtype=grad.dtype)
    # windows overlap when stride < pool, so accumulate
    np.add.at(dx, (np.arange(b)[:, None, None], idx, np.arange(c)[None, None, :]), grad)
    return dx


@njit(cache=True)
def _maxpool_bwd(grad, idx, length):
    b, lout, c = grad.shape
    dx = np.zeros((b, length, c), dtype=grad.dtype)
    for i in range(b):
        for o in range(lout):
            for j in range(c):
                dx[i, idx[i, o, j], j] += grad[i, o, j]
    return dx


def maxpool_backward_nb(grad: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    return _maxpool_bwd(np.ascontiguousarray(grad), np.ascontiguousarray(idx), length)


# ---------------------------------------------------------------------------
# overlap-add: out[r + k] += cols[r, k] for cols of shape (R, K, C)
# ---------------------------------------------------------------------------


def overlap_add_np(cols: np.ndarray, n_out: int) -> np.ndarray:
    r, k, c = cols.shape
    out = np.zeros((n_out, c), dtype=cols.dtype)
    for j in range(k):
        out[j : j + r] += cols[:, j]
    return out


@njit(cache=True)
def _overlap_add(cols, n_out):
    r, k, c = cols.shape
    out = np.zeros((n_out, c), dtype=cols.dtype)
    for j in range(k):
        for i in range(r):
            for ch in range(c):
                out[i + j, ch] += cols[i, j, ch]
    return out


def overlap_add_nb(cols: np.ndarray, n_out: int) -> np.ndarray:
    return _overlap_add(np.ascontiguousarray(cols), n_out)


# ---------------------------------------------------------------------------
# fused Adam update on flat parameter/moment buffers
#   m = b1 m + (1 - b1) g;  v = b2 v + (1 - b2) g^2
#   p -= step * m / (sqrt(v / c2) + eps)      with step = lr / c1
# ---------------------------------------------------------------------------


def adam_update_np(p, g, m, v, step, b1, b2, c2, eps) -> None:
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * np.square(g)
    denom = np.sqrt(v / c2)
    denom += eps
    np.divide(m, denom, out=denom)
    denom *= step
    p -= denom


@njit(cache=True)
def _adam_update(p, g, m, v, step, b1, b2, c2, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (np.sqrt(vi / c2) + eps)


def adam_update_nb(p, g, m, v, step, b1, b2, c2, eps) -> None:
    if not (p.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        return adam_update_np(p, g, m, v, step, b1, b2, c2, eps)
    _adam_update(p.reshape(-1), np.ascontiguousarray(g, dtype=p.dtype).reshape(-1), m.reshape(-1), v.reshape(-1),
                 step, b1, b2, c2, eps)


if USE_NUMBA:
    centered_mean = centered_mean_nb
    onepole = onepole_nb
    maxpool_forward = maxpool_forward_nb
    maxpool_backward = maxpool_backward_nb
    overlap_add = overlap_add_nb
    adam_update = adam_update_nb
else:
    centered_mean = centered_mean_np
    onepole = onepole_np
    maxpool_forward = maxpool_forward_np
    maxpool_backward = maxpool_backward_np
    overlap_add = overlap_add_np
    adam_update = adam_update_np

BACKEND = "numba" if USE_NUMBA else "numpy"
