"""Brute-force k-nearest-neighbour classification."""

from __future__ import annotations

import numpy as np

from curbsense.evaluation.metrics import macro_f1_accuracy
from curbsense.evaluation.splits import stratified_kfold

DEFAULT_KS = (1, 3, 5, 7, 9)


def neighbors(train_x: np.ndarray, query_x: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the ``k`` Euclidean-nearest training rows per query; distance ties go to the lower index."""
    tx = np.asarray(train_x, dtype=np.float64)
    qx = np.asarray(query_x, dtype=np.float64)
    n = len(tx)
    if n == 0:
        raise ValueError("empty training set")
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    tn = np.einsum("ij,ij->i", tx, tx)
    out = np.empty((len(qx), k), dtype=np.int64)
    for s in range(0, len(qx), chunk):
        q = qx[s : s + chunk]
        d = tn[None, :] - 2.0 * (q @ tx.T) + np.einsum("ij,ij->i", q, q)[:, None]
        np.maximum(d, 0.0, out=d)
        if k < n:
            kth = np.partition(d, k - 1, axis=1)[:, k - 1 : k]
        else:
            kth = d.max(axis=1, keepdims=True)
        for r in range(len(q)):
            cand = np.flatnonzero(d[r] <= kth[r, 0])
            order = np.lexsort((cand, d[r, cand]))
            out[s + r] = cand[order[:k]]
    return out


def vote(neighbor_labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Per-row vote fractions; argmax of the result breaks ties toward the smaller class."""
    m, k = neighbor_labels.shape
    counts = np.zeros((m, n_classes))
    np.add.at(counts, (np.repeat(np.arange(m), k), neighbor_labels.ravel()), 1.0)
    return counts / k


def knn_predict(train_x, train_y, query_x, k: int, n_classes: int | None = None, proba: bool = False):
    train_y = np.asarray(train_y, dtype=np.int64)
    n_classes = n_classes or int(train_y.max()) + 1
    votes = vote(train_y[neighbors(train_x, query_x, k)], n_classes)
    return votes if proba else votes.argmax(axis=1)


def choose_k(x, y, ks=DEFAULT_KS, folds: int = 5, seed: int = 0, n_classes: int | None = None) -> tuple[int, dict]:
    """k maximising mean macro F1 over a stratified ``folds``-fold split; ties pick the smaller k."""
    y = np.asarray(y, dtype=np.int64)
    n_classes = n_classes or int(y.max()) + 1
    scores = {k: [] for k in ks}
    for tr, va in stratified_kfold(y, folds, seed):
        usable = [k for k in ks if k <= len(tr)]
        nb = neighbors(x[tr], x[va], max(usable))
        for k in usable:
            pred = vote(y[tr][nb[:, :k]], n_classes).argmax(axis=1)
            scores[k].append(macro_f1_accuracy(pred, y[va], n_classes)[0])
    mean = {k: float(np.mean(v)) for k, v in scores.items() if v}
    best = max(mean, key=lambda k: (mean[k], -k))
    return best, mean
