"""Multinomial logistic regression trained by full-batch Adam."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from curbsense.evaluation.splits import stratified_kfold
from curbsense.nn.functional import log_softmax
from curbsense.nn.optim import AdamState, adam_step

DEFAULT_CS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class LogisticRegression:
    """Minimises mean cross-entropy + ||W||^2 / (2 C); the bias is not penalised.

    The penalty does not scale with N, so duplicating the data leaves the
    optimum unchanged.
    """

    C: float = 1.0
    lr: float = 0.05
    max_steps: int = 5000
    tol: float = 1e-5

    def fit(self, x, y, n_classes: int | None = None) -> "LogisticRegression":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite features")
        if len(np.unique(y)) < 2:
            raise ValueError("logistic regression needs at least 2 classes")
        k = n_classes or int(y.max()) + 1
        n, d = x.shape
        self.W = np.zeros((k, d))
        self.b = np.zeros(k)
        rows = np.arange(n)
        state = AdamState(lr=self.lr)
        self.steps = 0
        for self.steps in range(1, self.max_steps + 1):
            # softmax computed in place, then turned into the loss gradient wrt the logits
            g = x @ self.W.T
            g += self.b
            g -= g.max(axis=1, keepdims=True)
            np.exp(g, out=g)
            g /= g.sum(axis=1, keepdims=True)
            g[rows, y] -= 1.0
            g /= n
            gw = g.T @ x + self.W / self.C
            gb = g.sum(axis=0)
            if np.sqrt(np.sum(gw * gw) + np.sum(gb * gb)) < self.tol:
                break
            adam_step([self.W, self.b], [gw, gb], state)
        return self

    def decision_function(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.W.T + self.b

    def predict_proba(self, x) -> np.ndarray:
        return np.exp(log_softmax(self.decision_function(x)))

    def predict(self, x) -> np.ndarray:
        return self.decision_function(x).argmax(axis=1)


def choose_C(x, y, Cs=DEFAULT_CS, folds: int = 5, seed: int = 0, n_classes: int | None = None, **fit_kw) -> tuple[float, dict]:
    """C with the best mean held-out accuracy over a stratified split; ties pick the smaller C."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = n_classes or int(y.max()) + 1
    scores = {c: [] for c in Cs}
    for tr, va in stratified_kfold(y, folds, seed):
        if len(np.unique(y[tr])) < 2:
            continue
        for c in Cs:
            model = LogisticRegression(C=c, **fit_kw).fit(x[tr], y[tr], k)
            scores[c].append(float(np.mean(model.predict(x[va]) == y[va])))
    mean = {c: float(np.mean(v)) for c, v in scores.items() if v}
    best = max(mean, key=lambda c: (mean[c], -c))
    return best, mean
