"""LOSO harness: metrics, baselines, smoothing, clustering and experiment runners."""

from curbsense.evaluation.features import (
    HEURISTIC_NAMES,
    Standardizer,
    fft_band_edges,
    fft_features,
    heuristic_features,
    mv_features,
    raw_features,
)
from curbsense.evaluation.kmeans import KMeansResult, kmeans, kmeans_pp, lloyd
from curbsense.evaluation.knn import choose_k, knn_predict, neighbors, vote
from curbsense.evaluation.logreg import LogisticRegression, choose_C
from curbsense.evaluation.metrics import adjusted_rand_index, confusion_matrix, macro_f1_accuracy, per_class_f1
from curbsense.evaluation.smoothing import smooth_probabilities
from curbsense.evaluation.splits import Fold, loso_folds, stratified_kfold, stratified_split, stratified_subset

__all__ = [
    "HEURISTIC_NAMES",
    "Standardizer",
    "fft_band_edges",
    "fft_features",
    "heuristic_features",
    "mv_features",
    "raw_features",
    "KMeansResult",
    "kmeans",
    "kmeans_pp",
    "lloyd",
    "choose_k",
    "knn_predict",
    "neighbors",
    "vote",
    "LogisticRegression",
    "choose_C",
    "adjusted_rand_index",
    "confusion_matrix",
    "macro_f1_accuracy",
    "per_class_f1",
    "smooth_probabilities",
    "Fold",
    "loso_folds",
    "stratified_kfold",
    "stratified_split",
    "stratified_subset",
]
