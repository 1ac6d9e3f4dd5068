"""LOSO fold plans and stratified splits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Split positions 0..n-1 so each class sends round(fraction * n_c) members to the second part."""
    labels = np.asarray(labels)
    first, second = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        m = _round_half_up(fraction * len(idx))
        second.append(idx[:m])
        first.append(idx[m:])
    return np.sort(np.concatenate(first)).astype(np.int64), np.sort(np.concatenate(second)).astype(np.int64)


def stratified_kfold(labels, folds: int, seed: int = 0):
    """Yield (train, held-out) position arrays; each class is dealt round-robin after a seeded shuffle."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        assign[idx] = (np.arange(len(idx)) + rng.integers(folds)) % folds
    for f in range(folds):
        held = np.flatnonzero(assign == f)
        if len(held):
            yield np.flatnonzero(assign != f), held


def stratified_subset(labels, fraction: float, seed: int, n_classes: int, attempts: int = 10) -> np.ndarray:
    """round(fraction * N) positions, stratified by class, with every class present.

    A draw that misses a class is repeated with the next seed, up to ``attempts`` times.
    """
    labels = np.asarray(labels)
    n = len(labels)
    size = _round_half_up(fraction * n)
    if size >= n:
        return np.arange(n)
    for attempt in range(attempts):
        rng = np.random.default_rng([seed, attempt])
        # per-class quota by largest remainder so the total is exactly ``size``
        counts = np.bincount(labels, minlength=n_classes)
        raw = counts * size / n
        quota = np.floor(raw).astype(int)
        rest = size - quota.sum()
        order = np.lexsort((np.arange(n_classes), -(raw - quota)))
        quota[order[:rest]] += 1
        pick = [rng.choice(np.flatnonzero(labels == c), quota[c], replace=False) for c in range(n_classes) if quota[c]]
        idx = np.sort(np.concatenate(pick))
        if len(np.unique(labels[idx])) == n_classes:
            return idx
    raise ValueError(f"no {fraction:.0%} subset contains all {n_classes} classes after {attempts} attempts")


@dataclass
class Fold:
    test_user: str
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


def loso_folds(users, labels, valid_fraction: float = 0.1, seed: int = 0, n_classes: int | None = None) -> list[Fold]:
    """One fold per user; the others are split stratified into train/validation."""
    users = np.asarray(users)
    labels = np.asarray(labels)
    names = sorted(np.unique(users).tolist())
    if len(names) < 2:
        raise ValueError("LOSO needs at least 2 users")
    n_classes = n_classes or int(labels.max()) + 1
    folds = []
    for i, u in enumerate(names):
        pool = np.flatnonzero(users != u)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        tr, va = stratified_split(labels[pool], valid_fraction, rng)
        missing = sorted(set(range(n_classes)) - set(labels[pool[tr]].tolist()))
        if missing:
            warnings.warn(f"fold {u}: classes {missing} absent from the training split", stacklevel=2)
        folds.append(Fold(u, pool[tr], pool[va], np.flatnonzero(users == u)))
    return folds
