"""Stateless forward/backward primitives.

Layers run on time-major ``(B, L, C)`` sequences (the ``*_tm_*``
functions) and ``(B, F)`` vectors.  The ``(B, C, L)`` entry points and the
unbatched ``(C, L)`` / ``(F,)`` wrappers at the bottom transpose around them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from curbsense import _kernels


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(np.float64)


def _same_pad(k: int) -> tuple[int, int]:
    left = (k - 1) // 2
    return left, k - 1 - left


# ---------------------------------------------------------------------------
# convolution, time-major (B, L, C)
#
# A batch is padded per example and flattened to (B * Lp, C) rows.  Row r of
# the overlapping view ``rows[r] = X[r : r + K].ravel()`` is then an im2col
# row in (tap, channel) order, so each convolution is a single GEMM.  Rows
# that straddle two examples only ever meet zero gradients.
# ---------------------------------------------------------------------------


def _overlapping_rows(x2: np.ndarray, k: int) -> np.ndarray:
    # BLAS refuses overlapping strides, so materialise the view
    n, c = x2.shape
    view = as_strided(x2, (n - k + 1, k * c), (x2.strides[0], x2.strides[1]), writeable=False)
    return np.ascontiguousarray(view)


def conv1d_tm_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str = "valid"):
    """Cross-correlation on (B, L, C_in) with weights (C_out, C_in, K); returns ``(out, cache)``."""
    bsz, length, cin = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ValueError(f"conv1d: input has {cin} channels, weights expect {cin_w}")
    if b.shape != (cout,):
        raise ValueError(f"conv1d: bias shape {b.shape} != ({cout},)")
    if padding == "same":
        left, _ = _same_pad(k)
        xp = np.zeros((bsz, length + k - 1, cin), dtype=x.dtype)
        xp[:, left : left + length] = x
    elif padding == "valid":
        left = 0
        xp = np.ascontiguousarray(x)
    else:
        raise ValueError(f"unknown padding {padding!r}")
    lp = xp.shape[1]
    lout = lp - k + 1
    if lout < 1:
        raise ValueError(f"conv1d: kernel {k} longer than input {length}")
    n = bsz * lp
    x2 = xp.reshape(n, cin)
    cols = _overlapping_rows(x2, k)
    wm = w.transpose(0, 2, 1).reshape(cout, k * cin)
    buf = np.empty((n, cout), dtype=np.result_type(x.dtype, w.dtype))
    np.matmul(cols, wm.T, out=buf[: n - k + 1])
    out = buf.reshape(bsz, lp, cout)[:, :lout] + b
    return out, (cols, bsz, length, lp, left, k)


def conv1d_tm_backward(grad: np.ndarray, cache, w: np.ndarray):
    cols, bsz, length, lp, left, k = cache
    cout, cin, _ = w.shape
    n = bsz * lp
    r = n - k + 1
    lout = grad.shape[1]
    g = np.zeros((bsz, lp, cout), dtype=grad.dtype)
    g[:, :lout] = grad
    g2 = g.reshape(n, cout)[:r]
    wm = w.transpose(0, 2, 1).reshape(cout, k * cin)
    dw = (g2.T @ cols).reshape(cout, k, cin).transpose(0, 2, 1)
    db = grad.sum(axis=(0, 1))
    dcols = (g2 @ wm).reshape(r, k, cin)
    dx = _kernels.overlap_add(dcols, n).reshape(bsz, lp, cin)[:, left : left + length]
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db


def transposed_conv1d_tm_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, padding: str = "valid"):
    """Adjoint of :func:`conv1d_tm_forward` for weights (C_in, C_out, K); returns ``(out, cache)``.

    ``valid`` yields length ``(L - 1) * stride + K``; ``same`` (stride 1 only)
    crops that back to ``L``.
    """
    bsz, length, cin = x.shape
    cin_w, cout, k = w.shape
    if cin != cin_w:
        raise ValueError(f"transposed_conv1d: input has {cin} channels, weights expect {cin_w}")
    if b.shape != (cout,):
        raise ValueError(f"transposed_conv1d: bias shape {b.shape} != ({cout},)")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding == "same" and stride != 1:
        raise ValueError("same padding requires stride 1")
    if padding not in ("same", "valid"):
        raise ValueError(f"unknown padding {padding!r}")
    l1 = (length - 1) * stride + 1
    lp = l1 + k - 1
    xp = np.zeros((bsz, lp, cin), dtype=x.dtype)
    xp[:, :l1:stride] = x
    n = bsz * lp
    r = n - k + 1
    x2 = xp.reshape(n, cin)
    wt = w.transpose(0, 2, 1).reshape(cin, k * cout)
    y = (x2[:r] @ wt).reshape(r, k, cout)
    full = _kernels.overlap_add(y, n).reshape(bsz, lp, cout)
    left = _same_pad(k)[0] if padding == "same" else 0
    lo = length if padding == "same" else lp
    out = full[:, left : left + lo] + b
    return out, (x2, bsz, length, lp, left, k, stride)


def transposed_conv1d_tm_backward(grad: np.ndarray, cache, w: np.ndarray):
    x2, bsz, length, lp, left, k, stride = cache
    cin, cout, _ = w.shape
    n = bsz * lp
    r = n - k + 1
    g = np.zeros((bsz, lp, cout), dtype=grad.dtype)
    g[:, left : left + grad.shape[1]] = grad
    gcols = _overlapping_rows(g.reshape(n, cout), k)
    wt = w.transpose(0, 2, 1).reshape(cin, k * cout)
    buf = np.empty((n, cin), dtype=np.result_type(grad.dtype, w.dtype))
    np.matmul(gcols, wt.T, out=buf[:r])
    l1 = (length - 1) * stride + 1
    dx = buf.reshape(bsz, lp, cin)[:, :l1:stride]
    dw = (x2[:r].T @ gcols).reshape(cin, k, cout).transpose(0, 2, 1)
    db = grad.sum(axis=(0, 1))
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db


def maxpool1d_tm_forward(x: np.ndarray, pool: int = 2, stride: int | None = None):
    """Window maxima along axis 1; trailing partial window dropped; first maximum wins."""
    stride = pool if stride is None else stride
    if pool < 1 or stride < 1:
        raise ValueError("pool and stride must be >= 1")
    if x.shape[1] < pool:
        raise ValueError(f"maxpool: input length {x.shape[1]} shorter than pool {pool}")
    return _kernels.maxpool_forward(x, pool, stride)


def maxpool1d_tm_backward(grad: np.ndarray, idx: np.ndarray, in_length: int) -> np.ndarray:
    return _kernels.maxpool_backward(grad, idx, in_length)


def upsample1d_tm_forward(x: np.ndarray, factor: int = 2) -> np.ndarray:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    return np.repeat(x, factor, axis=1)


def upsample1d_tm_backward(grad: np.ndarray, factor: int = 2) -> np.ndarray:
    b, l, c = grad.shape
    return grad.reshape(b, l // factor, factor, c).sum(axis=2)


# ---------------------------------------------------------------------------
# channel-major (B, C, L) entry points
# ---------------------------------------------------------------------------


def _tm(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 1))


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, padding: str = "valid"):
    out, cache = conv1d_tm_forward(_tm(x), w, b, padding)
    return _tm(out), cache


def conv1d_backward(grad: np.ndarray, cache, w: np.ndarray):
    dx, dw, db = conv1d_tm_backward(_tm(grad), cache, w)
    return _tm(dx), dw, db


def transposed_conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 1, padding: str = "valid"):
    out, cache = transposed_conv1d_tm_forward(_tm(x), w, b, stride, padding)
    return _tm(out), cache


def transposed_conv1d_backward(grad: np.ndarray, cache, w: np.ndarray):
    dx, dw, db = transposed_conv1d_tm_backward(_tm(grad), cache, w)
    return _tm(dx), dw, db


def maxpool1d_forward(x: np.ndarray, pool: int = 2, stride: int | None = None):
    out, idx = maxpool1d_tm_forward(_tm(x), pool, stride)
    return _tm(out), _tm(idx)


def maxpool1d_backward(grad: np.ndarray, idx: np.ndarray, in_length: int) -> np.ndarray:
    return _tm(maxpool1d_tm_backward(_tm(grad), _tm(idx), in_length))


def upsample1d_forward(x: np.ndarray, factor: int = 2) -> np.ndarray:
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    return np.repeat(x, factor, axis=2)


def upsample1d_backward(grad: np.ndarray, factor: int = 2) -> np.ndarray:
    b, c, l = grad.shape
    return grad.reshape(b, c, l // factor, factor).sum(axis=3)


# ---------------------------------------------------------------------------
# losses and latent sampling
# ---------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, true_class, class_weights=None):
    """Weighted cross-entropy and its gradient w.r.t. the logits.

    For a batch ``(B, K)`` the loss is the batch mean of
    ``-w[y] * log softmax(logits)[y]``; a single ``(K,)`` row is accepted too.
    """
    logits = _as_float(logits)
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(true_class, dtype=np.int64))
    if not np.all(np.isfinite(lg)):
        raise FloatingPointError("non-finite logits")
    n, k = lg.shape
    if k < 2:
        raise ValueError("need at least two classes")
    w = np.ones(k, dtype=lg.dtype) if class_weights is None else np.asarray(class_weights, dtype=lg.dtype)
    if np.any(w <= 0):
        raise ValueError("class weights must be positive")
    rows = np.arange(n)
    logp = log_softmax(lg)
    wy = w[y]
    loss = float(-(wy * logp[rows, y]).sum() / n)
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    grad *= (wy / n)[:, None]
    return loss, (grad[0] if single else grad)


def mse_loss(pred, target):
    pred = _as_float(pred)
    target = _as_float(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape {pred.shape} != {target.shape}")
    diff = pred - target
    n = diff.size
    return float((diff * diff).sum() / n), 2.0 * diff / n


def kl_std_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis.

    Batched input returns the batch mean and gradients scaled accordingly.
    """
    mu = _as_float(mu)
    logvar = _as_float(logvar)
    ev = np.exp(logvar)
    per = -0.5 * (1.0 + logvar - mu * mu - ev).sum(axis=-1)
    scale = 1.0 if mu.ndim == 1 else 1.0 / mu.shape[0]
    return float(np.mean(per)), (mu * scale, 0.5 * (ev - 1.0) * scale)


def reparameterize(mu, logvar, rng=None, eps=None):
    """``z = mu + exp(logvar / 2) * eps``; returns ``(z, eps)``."""
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    if eps is None:
        eps = rng.standard_normal(mu.shape).astype(mu.dtype, copy=False)
    return mu + np.exp(0.5 * logvar) * eps, eps


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout multiplier: 0 for dropped elements, ``1 / (1 - rate)`` otherwise.

    Draws 16-bit uniforms (drop probability quantised to 1/65536), which is
    about twice as fast as float draws on large activations.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.integers(0, 1 << 16, size=shape, dtype=np.uint16) >= int(round(rate * (1 << 16)))
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - rate), dtype=dtype)


# ---------------------------------------------------------------------------
# unbatched conveniences
# ---------------------------------------------------------------------------


def _batched(fn, x, *args, **kwargs):
    x = _as_float(x)
    single = x.ndim == 2
    out = fn(x[None] if single else x, *args, **kwargs)
    out = out[0] if isinstance(out, tuple) else out
    return out[0] if single else out


def conv1d(x, weights, bias, padding: str = "valid") -> np.ndarray:
    return _batched(conv1d_forward, x, np.asarray(weights, dtype=float), np.asarray(bias, dtype=float), padding)


def transposed_conv1d(x, weights, bias, stride: int = 1, padding: str = "valid") -> np.ndarray:
    return _batched(transposed_conv1d_forward, x, np.asarray(weights, dtype=float), np.asarray(bias, dtype=float), stride, padding)


def maxpool1d(x, pool: int = 2, stride: int | None = None) -> np.ndarray:
    return _batched(maxpool1d_forward, x, pool, stride)


def upsample1d_nearest(x, factor: int = 2) -> np.ndarray:
    return _batched(upsample1d_forward, x, factor)


def dense(x, weights, bias) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if x.shape[-1] != weights.shape[1]:
        raise ValueError(f"dense: input has {x.shape[-1]} features, weights expect {weights.shape[1]}")
    return x @ weights.T + np.asarray(bias, dtype=float)


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x), 0)


def dropout(x, rate: float, mode: str = "train", rng: np.random.Generator | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, rng, x.dtype)
