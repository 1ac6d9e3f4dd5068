"""Hand-crafted window features for the baselines."""

from __future__ import annotations

import numpy as np

FFT_LENGTH = 512
SAMPLE_RATE_HZ = 50.0
HEURISTIC_NAMES = (
    "mean",
    "std",
    "max",
    "min",
    "zero_crossings",
    "diff_mean",
    "diff_std",
    "diff_max",
    "diff_min",
    "dominant_freq_hz",
    "fft_energy",
    "spectral_entropy",
)


def _power(x: np.ndarray) -> np.ndarray:
    # |X_k|^2 for bins 1..256 of the 512-point zero-padded FFT; the mean is removed
    # first so zero-padding does not leak DC into the other bins
    x = x - x.mean(axis=-1, keepdims=True)
    return np.abs(np.fft.rfft(x, n=FFT_LENGTH, axis=-1)[..., 1 : FFT_LENGTH // 2 + 1]) ** 2


def heuristic_features(windows: np.ndarray) -> np.ndarray:
    """12 statistics per axis for ``(3, L)`` or ``(N, 3, L)`` windows -> 36 (or N x 36) values."""
    x = np.asarray(windows, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.shape[-1] < 2:
        raise ValueError("window length must be >= 2")
    d = np.diff(x, axis=-1)
    zc = np.count_nonzero(x[..., 1:] * x[..., :-1] < 0, axis=-1)
    p = _power(x)
    total = p.sum(axis=-1)
    peak = np.argmax(p, axis=-1) + 1
    dom = np.where(total > 0, peak * (SAMPLE_RATE_HZ / FFT_LENGTH), 0.0)
    energy = total / FFT_LENGTH
    safe = np.where(total > 0, total, 1.0)[..., None]
    q = p / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(q > 0, q * np.log(q), 0.0).sum(axis=-1)
    ent = np.maximum(ent, 0.0)
    feats = np.stack(
        [x.mean(-1), x.std(-1), x.max(-1), x.min(-1), zc, d.mean(-1), d.std(-1), d.max(-1), d.min(-1), dom, energy, ent],
        axis=-1,
    )  # (N, 3, 12)
    out = feats.reshape(len(x), -1)
    return out[0] if single else out


def mv_features(windows: np.ndarray) -> np.ndarray:
    """Per-axis mean and standard deviation."""
    x = np.asarray(windows, dtype=np.float64)
    return np.concatenate([x.mean(-1), x.std(-1)], axis=-1)


def raw_features(windows: np.ndarray) -> np.ndarray:
    x = np.asarray(windows)
    return x.reshape(len(x), -1)


def fft_band_edges(n_bands: int) -> np.ndarray:
    """Bin edges (1-based, over bins 1..256) for ``n_bands`` log-spaced bands; 0 keeps every bin."""
    n_bins = FFT_LENGTH // 2
    if n_bands <= 0 or n_bands >= n_bins:
        return np.arange(1, n_bins + 2)
    edges = [1]
    for g in np.geomspace(1, n_bins + 1, n_bands + 1)[1:]:
        # rounding collapses the narrow low bands; keep every band at least one bin wide
        edges.append(max(int(round(g)), edges[-1] + 1))
    edges[-1] = n_bins + 1
    return np.array(edges)


def fft_features(windows: np.ndarray, n_bands: int = 0) -> np.ndarray:
    """log(1 + band power) of the zero-padded FFT magnitude spectrum, per axis."""
    p = _power(np.asarray(windows, dtype=np.float64))  # (N, 3, 256)
    edges = fft_band_edges(n_bands) - 1
    bands = np.add.reduceat(p, edges[:-1], axis=-1) / np.diff(edges)
    return np.log1p(bands).reshape(len(p), -1)


class Standardizer:
    """Per-column z-scoring fitted on training features."""

    def fit(self, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite features")
        self.mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.scale = np.where(sd > 1e-12, sd, 1.0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
