import numpy as np
import pytest

from curbsense.evaluation.features import (
    FFT_LENGTH,
    HEURISTIC_NAMES,
    Standardizer,
    fft_band_edges,
    fft_features,
    heuristic_features,
    mv_features,
)
from curbsense.evaluation.kmeans import kmeans
from curbsense.evaluation.knn import choose_k, knn_predict, neighbors
from curbsense.evaluation.logreg import LogisticRegression, choose_C
from curbsense.evaluation.metrics import adjusted_rand_index, confusion_matrix, macro_f1_accuracy
from curbsense.evaluation.smoothing import smooth_probabilities
from curbsense.evaluation.splits import loso_folds, stratified_kfold, stratified_split, stratified_subset


def brute_force_macro_f1(pred, labels, k):
    cm = [[0] * k for _ in range(k)]
    for p, t in zip(pred, labels):
        cm[t][p] += 1
    f1s = []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp
        fn = sum(cm[c]) - tp
        f1s.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / k, sum(cm[c][c] for c in range(k)) / len(labels)


# -- metrics ----------------------------------------------------------------


def test_macro_f1_examples():
    assert macro_f1_accuracy([0, 1, 2, 3], [0, 1, 2, 3]) == (1.0, 1.0)
    f1, acc = macro_f1_accuracy([0, 0, 0, 0], [0, 0, 1, 1], k=2)
    assert f1 == pytest.approx(1 / 3) and acc == 0.5
    rng = np.random.default_rng(0)
    assert macro_f1_accuracy(rng.integers(0, 4, 100), np.full(100, 2))[1] == pytest.approx(
        np.mean(rng.integers(0, 4, 100) == 2), abs=1.0)


def test_macro_f1_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n, k = int(rng.integers(1, 60)), int(rng.integers(2, 6))
        pred, labels = rng.integers(0, k, n), rng.integers(0, k, n)
        assert macro_f1_accuracy(pred, labels, k) == brute_force_macro_f1(pred.tolist(), labels.tolist(), k)


def test_confusion_matrix_checks():
    np.testing.assert_array_equal(confusion_matrix([1, 0], [0, 0], 2), [[1, 1], [0, 0]])
    with pytest.raises(ValueError):
        confusion_matrix([0, 4], [0, 1], 4)
    with pytest.raises(ValueError):
        macro_f1_accuracy([], [])


def test_adjusted_rand_index():
    assert adjusted_rand_index([0, 0, 1, 1], [5, 5, 2, 2]) == 1.0
    # hand value: contingency [[2, 0], [1, 1]] on 4 items
    assert adjusted_rand_index([0, 0, 1, 1], [0, 0, 0, 1]) == pytest.approx(0.0)
    rng = np.random.default_rng(2)
    assert abs(adjusted_rand_index(rng.integers(0, 4, 5000), rng.integers(0, 4, 5000))) < 0.01


# -- smoothing --------------------------------------------------------------


def test_smoothing_examples():
    const = np.tile([0.1, 0.7, 0.2], (9, 1))
    np.testing.assert_array_equal(smooth_probabilities(const), 1)
    seq = np.tile([0.9, 0.1], (7, 1))
    seq[3] = [0.1, 0.9]
    assert smooth_probabilities(seq)[3] == 0
    assert smooth_probabilities(np.array([[0.2, 0.8]]))[0] == 1


def test_smoothing_respects_groups():
    p = np.array([[1.0, 0.0]] * 4 + [[0.0, 1.0]] * 2)
    np.testing.assert_array_equal(smooth_probabilities(p), [0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(smooth_probabilities(p, groups=[0, 0, 0, 0, 1, 1]), [0, 0, 0, 0, 1, 1])
    with pytest.raises(ValueError):
        smooth_probabilities(p, length=4)


# -- features ---------------------------------------------------------------


def test_heuristic_constant_window():
    f = dict(zip([f"{a}_{n}" for a in "xyz" for n in HEURISTIC_NAMES], heuristic_features(np.full((3, 450), 2.5))))
    assert f["x_mean"] == 2.5
    for name in ("std", "zero_crossings", "diff_mean", "diff_std", "diff_max", "diff_min", "spectral_entropy"):
        assert f[f"y_{name}"] == pytest.approx(0.0, abs=1e-12)


def test_heuristic_dominant_frequency():
    fs = 50.0
    freq = 32 * fs / FFT_LENGTH  # 3.125 Hz, exactly on a bin
    t = np.arange(450) / fs
    w = np.stack([np.sin(2 * np.pi * freq * t)] * 3)
    f = heuristic_features(w).reshape(3, -1)
    dom = f[:, HEURISTIC_NAMES.index("dominant_freq_hz")]
    np.testing.assert_allclose(dom, 3.125, atol=fs / FFT_LENGTH)


def test_heuristic_zero_crossings_and_batch():
    w = np.tile(np.where(np.arange(450) % 2 == 0, 1.0, -1.0), (3, 1))
    assert heuristic_features(w)[HEURISTIC_NAMES.index("zero_crossings")] == 449
    batch = np.random.default_rng(3).normal(size=(4, 3, 450))
    f = heuristic_features(batch)
    assert f.shape == (4, 36)
    np.testing.assert_allclose(f[2], heuristic_features(batch[2]))


def test_mv_and_fft_features():
    x = np.random.default_rng(4).normal(size=(5, 3, 450))
    mv = mv_features(x)
    np.testing.assert_allclose(mv[:, :3], x.mean(-1))
    np.testing.assert_allclose(mv[:, 3:], x.std(-1))
    edges = fft_band_edges(32)
    assert edges[0] == 1 and edges[-1] == 257 and len(edges) == 33 and np.all(np.diff(edges) >= 1)
    assert fft_features(x, 32).shape == (5, 96)
    assert fft_features(x).shape == (5, 768)


def test_standardizer():
    x = np.random.default_rng(5).normal(3.0, 2.0, size=(100, 4))
    x[:, 3] = 1.0
    z = Standardizer().fit(x).transform(x)
    np.testing.assert_allclose(z[:, :3].mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[:, :3].std(0), 1.0)
    np.testing.assert_array_equal(z[:, 3], 0.0)


# -- splits -----------------------------------------------------------------


def test_stratified_split_proportions():
    labels = np.array([3] * 77 + [0] * 13 + [1] * 6 + [2] * 4)
    tr, va = stratified_split(labels, 0.1, np.random.default_rng(0))
    assert np.sum(labels[va] == 3) in (7, 8)
    assert sorted(np.concatenate([tr, va]).tolist()) == list(range(100))


def test_loso_folds_cover_dataset():
    rng = np.random.default_rng(1)
    users = np.repeat([f"U{i}" for i in range(1, 10)], 40)
    labels = rng.integers(0, 4, len(users))
    folds = loso_folds(users, labels, 0.1, seed=3)
    assert len(folds) == 9
    for f in folds:
        allidx = np.concatenate([f.train, f.valid, f.test])
        assert sorted(allidx.tolist()) == list(range(len(users)))
        assert set(users[f.test]) == {f.test_user}
        assert f.test_user not in set(users[f.train]) | set(users[f.valid])


def test_stratified_subset():
    labels = np.array([3] * 2290 + [0] * 300 + [1] * 250 + [2] * 130)
    idx = stratified_subset(labels, 0.02, seed=0, n_classes=4)
    assert len(idx) == round(0.02 * len(labels))
    assert set(labels[idx]) == {0, 1, 2, 3}
    np.testing.assert_array_equal(idx, stratified_subset(labels, 0.02, seed=0, n_classes=4))
    with pytest.raises(ValueError):
        stratified_subset(np.array([0] * 99 + [1]), 0.02, seed=0, n_classes=3)


def test_stratified_kfold_partitions():
    labels = np.random.default_rng(2).integers(0, 3, 103)
    held = np.concatenate([va for _, va in stratified_kfold(labels, 5, seed=1)])
    assert sorted(held.tolist()) == list(range(103))


# -- kNN --------------------------------------------------------------------


def test_knn_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(30, 2))
    y = rng.integers(0, 3, 30)
    assert knn_predict(x, y, x[7:8], 1)[0] == y[7]
    assert knn_predict(x, y, rng.normal(size=(4, 2)), 30).tolist() == [np.bincount(y).argmax()] * 4


def test_knn_two_clusters_brute_force():
    rng = np.random.default_rng(1)
    a = rng.normal(0.0, 0.5, size=(20, 3))
    b = rng.normal(5.0, 0.5, size=(20, 3))
    x, y = np.vstack([a, b]), np.array([0] * 20 + [1] * 20)
    q = np.array([[4.8, 5.1, 5.0], [0.2, -0.1, 0.1]])
    d = ((q[:, None, :] - x[None]) ** 2).sum(-1)
    brute = np.argsort(d, axis=1, kind="stable")[:, :3]
    np.testing.assert_array_equal(np.sort(neighbors(x, q, 3), axis=1), np.sort(brute, axis=1))
    assert knn_predict(x, y, q, 3).tolist() == [1, 0]


def test_choose_k_prefers_valid_k():
    rng = np.random.default_rng(2)
    x = np.vstack([rng.normal(0, 1, (60, 2)), rng.normal(4, 1, (60, 2))])
    y = np.repeat([0, 1], 60)
    k, scores = choose_k(x, y, seed=0)
    assert k in scores and scores[k] == max(scores.values())


# -- logistic regression ----------------------------------------------------


def _blobs(seed, n=40, sep=3.0):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(-sep, 1.0, (n, 2)), rng.normal(sep, 1.0, (n, 2))])
    return x, np.repeat([0, 1], n)


def test_logreg_separable():
    x, y = _blobs(0)
    model = LogisticRegression(C=10.0).fit(x, y)
    assert np.mean(model.predict(x) == y) == 1.0
    np.testing.assert_allclose(model.predict_proba(x).sum(1), 1.0)


def test_logreg_rejects_single_class():
    with pytest.raises(ValueError):
        LogisticRegression().fit(np.zeros((5, 2)), np.zeros(5, dtype=int))


def test_logreg_duplicated_data_same_solution():
    x, y = _blobs(1, sep=1.0)
    a = LogisticRegression(C=1.0).fit(x, y)
    b = LogisticRegression(C=1.0).fit(np.vstack([x, x]), np.concatenate([y, y]))
    np.testing.assert_allclose(b.decision_function(x), a.decision_function(x), atol=1e-6)


def test_choose_C_returns_grid_value():
    x, y = _blobs(2, sep=1.0)
    c, scores = choose_C(x, y, Cs=(0.01, 1.0), max_steps=200)
    assert c in (0.01, 1.0) and set(scores) == {0.01, 1.0}


# -- k-means ----------------------------------------------------------------


def test_kmeans_each_point_own_cluster():
    x = np.random.default_rng(0).normal(size=(16, 3))
    res = kmeans(x, k=16, seed=0, n_init=2)
    assert len(np.unique(res.labels)) == 16
    assert res.inertia == pytest.approx(0.0, abs=1e-12)


def test_kmeans_two_blobs():
    rng = np.random.default_rng(1)
    sigma, n = 0.5, 400
    means = np.array([[0.0, 0.0], [6.0, 1.0]])
    x = np.vstack([rng.normal(m, sigma, (n // 2, 2)) for m in means])
    res = kmeans(x, k=2, seed=3, n_init=3)
    centers = res.centers[np.argsort(res.centers[:, 0])]
    assert np.all(np.abs(centers - means) < 3 * sigma / np.sqrt(n / 2))
    dup = kmeans(np.vstack([x, x]), k=2, seed=3, n_init=3)
    np.testing.assert_allclose(dup.centers[np.argsort(dup.centers[:, 0])], centers, atol=1e-9)


def test_kmeans_is_seeded_and_needs_k_points():
    x = np.random.default_rng(2).normal(size=(100, 4))
    a, b = kmeans(x, 5, seed=7, n_init=2), kmeans(x, 5, seed=7, n_init=2)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        kmeans(x[:3], k=4)
