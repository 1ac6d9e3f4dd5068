"""Centered moving average over per-window class probabilities."""

from __future__ import annotations

import numpy as np

from curbsense import _kernels

SMOOTHING_LENGTH = 7


def smooth_probabilities(proba, groups=None, length: int = SMOOTHING_LENGTH) -> np.ndarray:
    """Argmax of the truncated centered mean of ``length`` rows; never averages across groups.

    ``groups`` gives a recording key per row (rows of one recording in time
    order); None treats the whole sequence as one recording.
    """
    p = np.asarray(proba, dtype=np.float64)
    if length < 1 or length % 2 == 0:
        raise ValueError("smoothing length must be odd and >= 1")
    if p.ndim != 2:
        raise ValueError("probabilities must be (N, K)")
    out = np.empty(len(p), dtype=np.int64)
    if groups is None:
        groups = np.zeros(len(p), dtype=np.int64)
    groups = np.asarray(groups)
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        out[idx] = _kernels.centered_mean(p[idx], length).argmax(axis=1)
    return out
