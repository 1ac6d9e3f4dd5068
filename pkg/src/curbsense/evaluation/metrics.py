"""Classification and clustering scores."""

from __future__ import annotations

import numpy as np
from scipy.special import comb


def confusion_matrix(pred, labels, k: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    pred = np.asarray(pred, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if pred.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if pred.size and (min(pred.min(), labels.min()) < 0 or max(pred.max(), labels.max()) >= k):
        raise ValueError(f"class index outside [0, {k})")
    return np.bincount(labels * k + pred, minlength=k * k).reshape(k, k)


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)  # 2tp + fp + fn
    out = np.zeros(len(cm))
    ok = denom > 0
    out[ok] = 2 * tp[ok] / denom[ok]
    return out


def macro_f1_accuracy(pred, labels, k: int = 4) -> tuple[float, float]:
    """Macro F1 over all ``k`` classes (0/0 counts as 0) and accuracy."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty input")
    cm = confusion_matrix(pred, labels, k)
    return float(per_class_f1(cm).mean()), float(np.trace(cm) / cm.sum())


def adjusted_rand_index(a, b) -> float:
    """Hubert-Arabie adjusted Rand index between two partitions."""
    a = np.unique(np.asarray(a), return_inverse=True)[1]
    b = np.unique(np.asarray(b), return_inverse=True)[1]
    n = a.size
    if n < 2:
        return 1.0
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    sum_ij = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(n, 2)
    top = 0.5 * (sum_a + sum_b)
    if top == expected:
        return 1.0
    return float((sum_ij - expected) / (top - expected))
