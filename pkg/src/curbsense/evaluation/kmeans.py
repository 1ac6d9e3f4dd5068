"""k-means with k-means++ seeding and restarts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    inertia_trace: list = field(default_factory=list)


def _sqdist(x: np.ndarray, c: np.ndarray, xn: np.ndarray) -> np.ndarray:
    d = xn[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each new center is the best of 2 + ln(k) D^2-sampled candidates."""
    n = len(x)
    xn = np.einsum("ij,ij->i", x, x)
    trials = 2 + int(math.log(k))
    centers = [x[rng.integers(n)]]
    closest = _sqdist(x, np.array(centers), xn)[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = rng.choice(n, size=trials, p=closest / total)
        d = np.minimum(closest[:, None], _sqdist(x, x[cand], xn))
        best = int(d.sum(axis=0).argmin())
        centers.append(x[cand[best]])
        closest = d[:, best]
    return np.array(centers)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    xn = np.einsum("ij,ij->i", x, x)
    centers = centers.copy()
    k = len(centers)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sqdist(x, centers, xn)
        labels = d.argmin(axis=1)
        dist = d[np.arange(len(x)), labels]
        trace.append(float(dist.sum()))
        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centers)
        np.add.at(new, labels, x)
        for j in np.flatnonzero(counts == 0):
            # re-seed an empty cluster at the point farthest from its center
            far = int(np.argmax(dist))
            counts[labels[far]] -= 1
            new[labels[far]] -= x[far]
            labels[far] = j
            dist[far] = 0.0
            new[j] = x[far]
            counts[j] = 1
        keep = counts > 0
        new[keep] /= counts[keep, None]
        new[~keep] = centers[~keep]
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            break
    d = _sqdist(x, centers, xn)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(x)), labels].sum())
    return KMeansResult(labels, centers, inertia, it, trace)


def kmeans(x, k: int = 16, seed: int = 0, n_init: int = 10, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Best of ``n_init`` k-means++ restarts by inertia."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        res = lloyd(x, kmeans_pp(x, k, np.random.default_rng(child)), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best
