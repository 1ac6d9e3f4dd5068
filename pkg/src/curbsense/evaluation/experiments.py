"""LOSO experiment runners: supervised table, PosNet, clustering, semi-supervised curve and VAE map.

Every runner takes prepared data plus a :class:`PipelineConfig` and returns
plain JSON-serializable reports.  Random streams derive from the master seed,
a stage tag and the fold index, so any fold can be rerun on its own.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from curbsense import models as M
from curbsense.accessibility_map import BinAggregate, bin_max_aggregate, minmax_normalize_per_user
from curbsense.config import PipelineConfig
from curbsense.evaluation.features import Standardizer, fft_features, heuristic_features, mv_features, raw_features
from curbsense.evaluation.kmeans import kmeans
from curbsense.evaluation.knn import choose_k, knn_predict
from curbsense.evaluation.logreg import LogisticRegression, choose_C
from curbsense.evaluation.metrics import adjusted_rand_index, confusion_matrix, macro_f1_accuracy
from curbsense.evaluation.smoothing import smooth_probabilities
from curbsense.evaluation.splits import Fold, loso_folds, stratified_split, stratified_subset
from curbsense.nn.graph import Sequential
from curbsense.roadsim import (
    KIND_INDEX,
    RouteGeometry,
    SegmentKind,
    build_route_geometry,
    default_experiment,
    load_profiles,
    load_route,
)
from curbsense.signal_core import N_SURFACE, RunRecording, SurfaceLabel, WindowSet, build_window_set
from curbsense.weak_supervision import GridIndex, LocalProjection, assign_grid_labels, build_grid_index

log = logging.getLogger(__name__)

SUPERVISED_METHODS = ("raw_knn", "mv_knn", "heuristic_mlp", "cnn", "cnn_mlp")
METHOD_LABELS = {
    "raw_knn": "Raw + k-NN",
    "mv_knn": "MV + k-NN",
    "heuristic_mlp": "Heuristic + MLP",
    "cnn": "CNN",
    "cnn_mlp": "CNN + MLP",
    "posnet_mlp": "PosNet + MLP",
}
SEMI_METHODS = ("posnet_mlp", "cnn_mlp", "heuristic_mlp")

# stage tags for seed derivation
_STAGES = {"split": 1, "cnn": 2, "posnet": 3, "vae": 4, "mlp": 5, "knn": 6, "logreg": 7, "kmeans": 8, "subset": 9}


def derive_seed(master: int, stage: str, *keys: int) -> int:
    ss = np.random.SeedSequence(int(master), spawn_key=(_STAGES[stage],) + tuple(int(k) for k in keys))
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class ExperimentData:
    recordings: list[RunRecording]
    geometry: RouteGeometry
    windows: WindowSet  # classifier windows
    vae_windows: WindowSet
    _cache: dict = field(default_factory=dict, repr=False)

    def heuristic(self) -> np.ndarray:
        if "heuristic" not in self._cache:
            self._cache["heuristic"] = heuristic_features(self.windows.X)
        return self._cache["heuristic"]

    def fft(self, bands: int) -> np.ndarray:
        key = ("fft", bands)
        if key not in self._cache:
            self._cache[key] = fft_features(self.windows.X, bands)
        return self._cache[key]


def simulate(cfg: PipelineConfig) -> list[RunRecording]:
    route = load_route(cfg.route)
    profiles = load_profiles(cfg.users)
    return default_experiment(cfg.seed, route, profiles, tuple(cfg.laps))


def window_sets(recordings: list[RunRecording], cfg: PipelineConfig) -> tuple[WindowSet, WindowSet]:
    w = cfg.window
    cls, _ = build_window_set(recordings, w.classifier, w.overlap, w.filter_length)
    vae, _ = build_window_set(recordings, w.vae, w.overlap, w.filter_length)
    return cls, vae


def prepare_data(cfg: PipelineConfig, recordings: list[RunRecording] | None = None,
                 windows: tuple[WindowSet, WindowSet] | None = None) -> ExperimentData:
    recordings = recordings if recordings is not None else simulate(cfg)
    geo = build_route_geometry(load_route(cfg.route))
    cls, vae = windows if windows is not None else window_sets(recordings, cfg)
    return ExperimentData(recordings, geo, cls, vae)


def fold_plan(ws: WindowSet, cfg: PipelineConfig) -> list[Fold]:
    folds = loso_folds(ws.user, ws.surface, cfg.evaluation.valid_fraction, derive_seed(cfg.seed, "split"), N_SURFACE)
    n = cfg.evaluation.max_folds
    return folds[:n] if n else folds


def training_pool(fold: Fold, cfg: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    """Every n-th window of the fold's train and validation splits; all methods share this pool."""
    s = cfg.evaluation.train_subsample
    return fold.train[::s], fold.valid[::s]


def window_kinds(ws: WindowSet, geometry: RouteGeometry, idx=None) -> np.ndarray:
    """Ground-truth segment kind at each window center, as experienced in the travel direction."""
    idx = np.arange(len(ws)) if idx is None else np.asarray(idx)
    arc, _ = geometry.project(ws.lat[idx], ws.lon[idx])
    out = np.empty(len(idx), dtype=np.int64)
    rev = ws.lap[idx] == 2
    for flag in (False, True):
        m = rev == flag
        if m.any():
            out[m] = geometry.kind_codes(arc[m], reverse=flag)
    return out


def _jobs_map(fn, items: list, jobs: int, shared) -> list:
    """Run ``fn(shared, item)`` for every item, in worker processes when ``jobs > 1``."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(shared, it) for it in items]
    global _SHARED
    _SHARED = shared
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
        return list(pool.map(_call_shared, [fn] * len(items), items))


_SHARED = None


def _call_shared(fn, item):
    return fn(_SHARED, item)


# ---------------------------------------------------------------------------
# model fitting helpers
# ---------------------------------------------------------------------------


def _epochs_for(n: int, tc: M.TrainConfig, min_steps: int) -> M.TrainConfig:
    if min_steps <= 0:
        return tc
    per_epoch = max(1, math.ceil(n / tc.batch_size))
    return replace(tc, max_epochs=max(tc.max_epochs, math.ceil(min_steps / per_epoch)))


def fit_surface_cnn(ws: WindowSet, tr, va, cfg: PipelineConfig, seed: int, min_steps: int = 0) -> tuple[Sequential, M.TrainResult]:
    graph = M.build_surface_cnn(cfg.cnn, seed=seed)
    tc = _epochs_for(len(tr), cfg.train.cnn.to_train_config(seed), min_steps)
    res = M.train_model(graph, (ws.X[tr], ws.surface[tr]), (ws.X[va], ws.surface[va]), tc, n_classes=N_SURFACE)
    return graph, res


@dataclass
class MlpHead:
    scaler: Standardizer
    graph: Sequential
    result: M.TrainResult

    def predict_proba(self, feats: np.ndarray) -> np.ndarray:
        return M.predict_proba(self.graph, self.scaler.transform(feats).astype(np.float32))


def fit_mlp_head(f_tr, y_tr, f_va, y_va, cfg: PipelineConfig, seed: int) -> MlpHead:
    scaler = Standardizer().fit(f_tr)
    graph = M.build_mlp(f_tr.shape[1], N_SURFACE, tuple(cfg.evaluation.mlp_hidden), seed=seed)
    res = M.train_model(
        graph,
        (scaler.transform(f_tr).astype(np.float32), y_tr),
        (scaler.transform(f_va).astype(np.float32), y_va),
        cfg.train.mlp.to_train_config(seed),
        n_classes=N_SURFACE,
    )
    return MlpHead(scaler, graph, res)


def score(proba: np.ndarray, labels: np.ndarray, groups: np.ndarray, smoothing_length: int) -> dict:
    """Macro F1 / accuracy with and without smoothing, plus confusion matrices."""
    pred = proba.argmax(axis=1)
    spred = smooth_probabilities(proba, groups, smoothing_length)
    f1, acc = macro_f1_accuracy(pred, labels, N_SURFACE)
    sf1, sacc = macro_f1_accuracy(spred, labels, N_SURFACE)
    return {
        "f1": f1,
        "acc": acc,
        "f1_smoothed": sf1,
        "acc_smoothed": sacc,
        "confusion": confusion_matrix(pred, labels, N_SURFACE).tolist(),
        "confusion_smoothed": confusion_matrix(spred, labels, N_SURFACE).tolist(),
    }


def _mean_rows(rows: list[dict], keys=("f1", "acc", "f1_smoothed", "acc_smoothed")) -> dict:
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


# ---------------------------------------------------------------------------
# supervised surface classification
# ---------------------------------------------------------------------------


def train_cnn_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig) -> tuple[Sequential, M.TrainResult]:
    tr, va = training_pool(fold, cfg)
    return fit_surface_cnn(data.windows, tr, va, cfg, derive_seed(cfg.seed, "cnn", index))


def _knn_method(feats, y, tr, te, cfg, seed) -> tuple[np.ndarray, int]:
    ev = cfg.evaluation
    cv = tr
    if ev.knn_cv_max and len(cv) > ev.knn_cv_max:
        cv = np.sort(np.random.default_rng(seed).choice(tr, ev.knn_cv_max, replace=False))
    k, _ = choose_k(feats[cv], y[cv], tuple(ev.knn_ks), ev.cv_folds, seed, N_SURFACE)
    return knn_predict(feats[tr], y[tr], feats[te], k, N_SURFACE, proba=True), k


def supervised_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig, cnn: Sequential) -> dict:
    """All supervised methods on one LOSO fold; returns per-method scores."""
    ws = data.windows
    y = ws.surface.astype(np.int64)
    tr, va = training_pool(fold, cfg)
    te = fold.test
    groups = ws.rec[te]
    L = cfg.evaluation.smoothing_length
    out: dict = {"test_user": fold.test_user, "n_train": int(len(tr)), "n_test": int(len(te)), "methods": {}, "k": {}}

    idx = np.concatenate([tr, te])
    raw = np.zeros((len(ws), ws.X.shape[1] * ws.X.shape[2]), dtype=np.float32)
    raw[idx] = raw_features(ws.X[idx])
    for name, feats in (("raw_knn", raw), ("mv_knn", mv_features(ws.X))):
        proba, k = _knn_method(feats, y, tr, te, cfg, derive_seed(cfg.seed, "knn", index))
        out["methods"][name] = score(proba, y[te], groups, L)
        out["k"][name] = k
    del raw

    heur = data.heuristic()
    head = fit_mlp_head(heur[tr], y[tr], heur[va], y[va], cfg, derive_seed(cfg.seed, "mlp", index, 0))
    out["methods"]["heuristic_mlp"] = score(head.predict_proba(heur[te]), y[te], groups, L)

    out["methods"]["cnn"] = score(M.predict_proba(cnn, ws.X[te]), y[te], groups, L)
    f_tr = M.extract_fc_features(cnn, ws.X[tr])
    f_va = M.extract_fc_features(cnn, ws.X[va])
    head = fit_mlp_head(f_tr, y[tr], f_va, y[va], cfg, derive_seed(cfg.seed, "mlp", index, 1))
    out["methods"]["cnn_mlp"] = score(head.predict_proba(M.extract_fc_features(cnn, ws.X[te])), y[te], groups, L)
    return out


def summarize_supervised(rows: list[dict]) -> dict:
    methods = list(rows[0]["methods"])
    mean = {m: _mean_rows([r["methods"][m] for r in rows]) for m in methods}
    conf = {
        m: {
            kind: np.sum([r["methods"][m][kind] for r in rows], axis=0).tolist()
            for kind in ("confusion", "confusion_smoothed")
        }
        for m in methods
    }
    return {"methods": methods, "folds": rows, "mean": mean, "confusion": conf}


def run_supervised(data: ExperimentData, cfg: PipelineConfig, cnns: list[Sequential] | None = None, jobs: int = 1) -> dict:
    folds = fold_plan(data.windows, cfg)
    if cnns is None:
        cnns = [m for m, _ in _jobs_map(_train_cnn_job, [(i, f, cfg) for i, f in enumerate(folds)], jobs, data)]
    items = [(i, f, cfg, c) for i, (f, c) in enumerate(zip(folds, cnns))]
    return summarize_supervised(_jobs_map(_supervised_job, items, jobs, data))


def _train_cnn_job(data, item):
    i, fold, cfg = item
    return train_cnn_fold(data, fold, i, cfg)


def _supervised_job(data, item):
    i, fold, cfg, cnn = item
    return supervised_fold(data, fold, i, cfg, cnn)


def format_table(report: dict) -> str:
    """Plain-text table: method x {FS, Acc} x {without, with} smoothing, in percent."""
    head = f"{'Method':<18}{'FS':>8}{'Acc':>8}{'FS(s)':>8}{'Acc(s)':>8}"
    lines = ["Mean over LOSO folds; (s) = with smoothing", head, "-" * len(head)]
    for m in report["methods"]:
        r = report["mean"][m]
        lines.append(
            f"{METHOD_LABELS.get(m, m):<18}{100 * r['f1']:>8.1f}{100 * r['acc']:>8.1f}"
            f"{100 * r['f1_smoothed']:>8.1f}{100 * r['acc_smoothed']:>8.1f}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# weak supervision: grid labels, PosNet, logistic-regression baseline
# ---------------------------------------------------------------------------


def route_projection(geometry: RouteGeometry) -> LocalProjection:
    tab = geometry.table(1.0)
    return LocalProjection.centered_on(tab[:, 1], tab[:, 2])


def fold_grid(data: ExperimentData, test_user: str, cfg: PipelineConfig) -> GridIndex:
    """Target cells covered by the training users' runs, numbered in traversal order."""
    recs = [r for r in data.recordings if r.user != test_user]
    lat = np.concatenate([r.lat for r in recs])
    lon = np.concatenate([r.lon for r in recs])
    return build_grid_index(lat, lon, route_projection(data.geometry), cfg.evaluation.grid_cell_m)


def grid_labels(ws: WindowSet, grid: GridIndex, cfg: PipelineConfig) -> tuple[np.ndarray, int]:
    """Grid ID per window (-1 = dropped) and the number dropped."""
    lab = assign_grid_labels(ws, grid, cfg.evaluation.grid_fallback_m)
    ids = np.full(len(ws), -1, dtype=np.int64)
    ids[lab.kept] = lab.windows.grid_id
    return ids, lab.dropped


def train_posnet_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig,
                      grid: GridIndex | None = None) -> tuple[Sequential, GridIndex, M.TrainResult]:
    grid = grid or fold_grid(data, fold.test_user, cfg)
    ids, _ = grid_labels(data.windows, grid, cfg)
    tr, va = training_pool(fold, cfg)
    tr, va = tr[ids[tr] >= 0], va[ids[va] >= 0]
    seed = derive_seed(cfg.seed, "posnet", index)
    graph = M.build_posnet(grid.count, cfg.cnn, seed=seed)
    tc = cfg.train.posnet.to_train_config(seed)
    res = M.train_model(graph, (data.windows.X[tr], ids[tr]), (data.windows.X[va], ids[va]), tc, n_classes=grid.count)
    return graph, grid, res


def _logreg_kw(cfg: PipelineConfig) -> dict:
    ev = cfg.evaluation
    return {"lr": ev.logreg_lr, "max_steps": ev.logreg_max_steps, "tol": ev.logreg_tol}


def choose_logreg_C(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig, grid: GridIndex) -> tuple[float, dict]:
    ev = cfg.evaluation
    ids, _ = grid_labels(data.windows, grid, cfg)
    tr, _ = training_pool(fold, cfg)
    tr = tr[ids[tr] >= 0]
    seed = derive_seed(cfg.seed, "logreg", index)
    if ev.logreg_cv_max and len(tr) > ev.logreg_cv_max:
        tr = np.sort(np.random.default_rng(seed).choice(tr, ev.logreg_cv_max, replace=False))
    feats = data.fft(ev.fft_bands)
    x = Standardizer().fit(feats[tr]).transform(feats[tr])
    return choose_C(x, ids[tr], tuple(ev.logreg_Cs), ev.cv_folds, seed, grid.count, **_logreg_kw(cfg))


def posnet_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig, posnet: Sequential,
                grid: GridIndex, C: float | None = None) -> dict:
    """Held-out position accuracy of PosNet and of the FFT + logistic-regression baseline."""
    ws = data.windows
    ids, _ = grid_labels(ws, grid, cfg)
    te = fold.test[ids[fold.test] >= 0]
    dropped = int(len(fold.test) - len(te))
    acc = float(np.mean(M.predict_proba(posnet, ws.X[te]).argmax(axis=1) == ids[te]))

    tr, _ = training_pool(fold, cfg)
    tr = tr[ids[tr] >= 0]
    cv_scores = None
    if C is None:
        C, cv_scores = choose_logreg_C(data, fold, index, cfg, grid)
    feats = data.fft(cfg.evaluation.fft_bands)
    scaler = Standardizer().fit(feats[tr])
    lr = LogisticRegression(C=C, **_logreg_kw(cfg)).fit(scaler.transform(feats[tr]), ids[tr], grid.count)
    lr_acc = float(np.mean(lr.predict(scaler.transform(feats[te])) == ids[te]))
    return {
        "test_user": fold.test_user,
        "n_classes": grid.count,
        "chance": 1.0 / grid.count,
        "posnet_acc": acc,
        "logreg_acc": lr_acc,
        "logreg_C": float(C),
        "logreg_cv": cv_scores,
        "logreg_steps": int(lr.steps),
        "test_dropped": dropped,
        "n_test": int(len(te)),
    }


def summarize_posnet(rows: list[dict]) -> dict:
    keys = ("posnet_acc", "logreg_acc", "chance")
    return {"folds": rows, "mean": {k: float(np.mean([r[k] for r in rows])) for k in keys}}


def run_posnet(data: ExperimentData, cfg: PipelineConfig, posnets=None, jobs: int = 1) -> tuple[dict, list, list]:
    """Train (unless given) and evaluate PosNet on every fold; returns (report, models, grids)."""
    folds = fold_plan(data.windows, cfg)
    if posnets is None:
        trained = _jobs_map(_train_posnet_job, [(i, f, cfg) for i, f in enumerate(folds)], jobs, data)
        posnets, grids = [t[0] for t in trained], [t[1] for t in trained]
    else:
        posnets, grids = posnets
    C = None
    if cfg.evaluation.logreg_cv_once:
        C, _ = choose_logreg_C(data, folds[0], 0, cfg, grids[0])
    items = [(i, f, cfg, p, g, C) for i, (f, p, g) in enumerate(zip(folds, posnets, grids))]
    report = summarize_posnet(_jobs_map(_posnet_job, items, jobs, data))
    return report, posnets, grids


def _train_posnet_job(data, item):
    i, fold, cfg = item
    return train_posnet_fold(data, fold, i, cfg)


def _posnet_job(data, item):
    i, fold, cfg, posnet, grid, C = item
    return posnet_fold(data, fold, i, cfg, posnet, grid, C)


# ---------------------------------------------------------------------------
# k-means on PosNet features
# ---------------------------------------------------------------------------


def _majority(values: np.ndarray) -> int:
    return int(np.bincount(values).argmax()) if len(values) else -1


def cluster_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig, posnet: Sequential) -> dict:
    """k-means on the held-out user's PosNet features, compared with the true segment kinds."""
    ws = data.windows
    te = fold.test
    feats = M.extract_fc_features(posnet, ws.X[te]).astype(np.float64)
    km = kmeans(feats, cfg.evaluation.kmeans_k, derive_seed(cfg.seed, "kmeans", index), cfg.evaluation.kmeans_restarts)
    kinds = window_kinds(ws, data.geometry, te)
    ari = adjusted_rand_index(km.labels, kinds)

    asc = _majority(km.labels[kinds == KIND_INDEX[SegmentKind.ASC_SLP]])
    desc = _majority(km.labels[kinds == KIND_INDEX[SegmentKind.DESC_SLP]])

    centers = data.geometry.curb_centers()
    curb = np.flatnonzero(ws.surface[te] == SurfaceLabel.Curb)
    curb_cluster = _majority(km.labels[curb])
    detected: list[int] = []
    if len(curb):
        arc, _ = data.geometry.project(ws.lat[te][curb], ws.lon[te][curb])
        nearest = np.abs(arc[:, None] - centers[None, :]).argmin(axis=1)
        detected = sorted(set(nearest[km.labels[curb] == curb_cluster].tolist()))
    return {
        "test_user": fold.test_user,
        "ari": float(ari),
        "asc_cluster": asc,
        "desc_cluster": desc,
        "slopes_separated": bool(asc >= 0 and desc >= 0 and asc != desc),
        "curb_cluster": curb_cluster,
        "curbs_detected": len(detected),
        "curbs_total": int(len(centers)),
        "all_curbs_detected": len(detected) == len(centers),
        "inertia": float(km.inertia),
        "labels": km.labels.tolist(),
    }


def run_clustering(data: ExperimentData, cfg: PipelineConfig, posnets: list[Sequential], jobs: int = 1) -> dict:
    folds = fold_plan(data.windows, cfg)
    rows = _jobs_map(_cluster_job, [(i, f, cfg, p) for i, (f, p) in enumerate(zip(folds, posnets))], jobs, data)
    return {
        "folds": rows,
        "mean_ari": float(np.mean([r["ari"] for r in rows])),
        "slopes_separated_folds": int(sum(r["slopes_separated"] for r in rows)),
        "all_curbs_detected_folds": int(sum(r["all_curbs_detected"] for r in rows)),
        "n_folds": len(rows),
    }


def _cluster_job(data, item):
    i, fold, cfg, posnet = item
    return cluster_fold(data, fold, i, cfg, posnet)


# ---------------------------------------------------------------------------
# semi-supervised curve
# ---------------------------------------------------------------------------


def _frac_key(f: float) -> str:
    return f"{f:g}"


def semi_supervised_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig, posnet: Sequential,
                         reuse: dict | None = None) -> dict:
    """Macro F1 of each method at each labeled-subset size for one fold.

    Subsets are drawn, stratified by surface class, from the fold's training
    pool and split 90/10 for early stopping.  ``reuse`` maps method name to the
    full-pool score already computed by the supervised run.
    """
    ws = data.windows
    y = ws.surface.astype(np.int64)
    ev = cfg.evaluation
    tr_pool, va_pool = training_pool(fold, cfg)
    te = fold.test
    heur = data.heuristic()
    pos_te = M.extract_fc_features(posnet, ws.X[te])
    points = {}
    for j, frac in enumerate(ev.subsets):
        seed = derive_seed(cfg.seed, "subset", index, j)
        if frac >= 1.0:
            tr, va = tr_pool, va_pool
        else:
            sub = tr_pool[stratified_subset(y[tr_pool], frac, seed, N_SURFACE)]
            a, b = stratified_split(y[sub], ev.valid_fraction, np.random.default_rng(seed))
            tr, va = sub[a], (sub[b] if len(b) else sub[a])
        row = {"n_labeled": int(len(tr) + (len(va) if frac < 1.0 else 0))}

        head = fit_mlp_head(M.extract_fc_features(posnet, ws.X[tr]), y[tr], M.extract_fc_features(posnet, ws.X[va]), y[va],
                            cfg, derive_seed(cfg.seed, "mlp", index, 10 + 3 * j))
        row["posnet_mlp"] = macro_f1_accuracy(head.predict_proba(pos_te).argmax(1), y[te], N_SURFACE)[0]

        if frac >= 1.0 and reuse is not None:
            row["cnn_mlp"] = reuse["cnn_mlp"]
            row["heuristic_mlp"] = reuse["heuristic_mlp"]
        else:
            cnn, _ = fit_surface_cnn(ws, tr, va, cfg, derive_seed(cfg.seed, "cnn", index, 1 + j), ev.subset_min_steps)
            head = fit_mlp_head(M.extract_fc_features(cnn, ws.X[tr]), y[tr], M.extract_fc_features(cnn, ws.X[va]), y[va],
                                cfg, derive_seed(cfg.seed, "mlp", index, 11 + 3 * j))
            pred = head.predict_proba(M.extract_fc_features(cnn, ws.X[te])).argmax(1)
            row["cnn_mlp"] = macro_f1_accuracy(pred, y[te], N_SURFACE)[0]
            head = fit_mlp_head(heur[tr], y[tr], heur[va], y[va], cfg, derive_seed(cfg.seed, "mlp", index, 12 + 3 * j))
            row["heuristic_mlp"] = macro_f1_accuracy(head.predict_proba(heur[te]).argmax(1), y[te], N_SURFACE)[0]
        points[_frac_key(frac)] = row
    return {"test_user": fold.test_user, "points": points}


def run_semi_supervised(data: ExperimentData, cfg: PipelineConfig, posnets: list[Sequential],
                        supervised: dict | None = None, jobs: int = 1) -> dict:
    folds = fold_plan(data.windows, cfg)
    items = []
    for i, (f, p) in enumerate(zip(folds, posnets)):
        reuse = None
        if supervised is not None:
            m = supervised["folds"][i]["methods"]
            reuse = {"cnn_mlp": m["cnn_mlp"]["f1"], "heuristic_mlp": m["heuristic_mlp"]["f1"]}
        items.append((i, f, cfg, p, reuse))
    rows = _jobs_map(_semi_job, items, jobs, data)
    keys = [_frac_key(f) for f in cfg.evaluation.subsets]
    mean = {k: {m: float(np.mean([r["points"][k][m] for r in rows])) for m in SEMI_METHODS} for k in keys}
    return {"fractions": keys, "methods": list(SEMI_METHODS), "folds": rows, "mean": mean}


def _semi_job(data, item):
    i, fold, cfg, posnet, reuse = item
    return semi_supervised_fold(data, fold, i, cfg, posnet, reuse)


def format_curve(report: dict) -> str:
    head = f"{'Labeled':>8}" + "".join(f"{METHOD_LABELS[m]:>18}" for m in report["methods"])
    lines = ["Mean macro F1 over LOSO folds", head, "-" * len(head)]
    for k in report["fractions"]:
        row = report["mean"][k]
        lines.append(f"{100 * float(k):>7g}%" + "".join(f"{100 * row[m]:>18.1f}" for m in report["methods"]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ConvVAE barrier scores
# ---------------------------------------------------------------------------


def vae_fold_plan(data: ExperimentData, cfg: PipelineConfig) -> list[Fold]:
    return fold_plan(data.vae_windows, cfg)


def train_vae_fold(data: ExperimentData, fold: Fold, index: int, cfg: PipelineConfig,
                   beta: float | None = None, variant: int = 0) -> tuple[M.ConvVae, M.TrainResult]:
    ws = data.vae_windows
    tr, va = training_pool(fold, cfg)
    seed = derive_seed(cfg.seed, "vae", index, variant)
    vcfg = replace(cfg.vae, beta=beta) if beta is not None or variant else cfg.vae
    vae = M.build_convvae(vcfg, seed=seed)
    res = M.train_model(vae.graph, (ws.X[tr], None), (ws.X[va], None), cfg.train.vae.to_train_config(seed), loss="vae")
    return vae, res


def vae_fold(data: ExperimentData, fold: Fold, vae: M.ConvVae) -> dict:
    """Per-user normalized reconstruction errors of the held-out user and the Curb-vs-Oths check."""
    ws = data.vae_windows
    te = fold.test
    err = M.vae_reconstruction_error(vae, ws.X[te])
    norm = minmax_normalize_per_user(err, ws.user[te])
    lab = ws.surface[te]
    curb = norm[lab == SurfaceLabel.Curb]
    oths = norm[lab == SurfaceLabel.Oths]
    curb_mean = float(curb.mean()) if len(curb) else float("nan")
    p90 = float(np.percentile(oths, 90)) if len(oths) else float("nan")
    return {
        "test_user": fold.test_user,
        "curb_mean": curb_mean,
        "oths_p90": p90,
        "curb_above_p90": bool(len(curb) and len(oths) and curb_mean > p90),
        "class_means": {SurfaceLabel(c).name: float(norm[lab == c].mean()) for c in range(N_SURFACE) if np.any(lab == c)},
        "normalized": norm,
        "raw": err,
    }


def curb_bin_ranks(agg: BinAggregate, geometry: RouteGeometry, bin_m: float) -> list[dict]:
    """Value and rank of the bin holding each curb, among occupied bins."""
    values = np.array([b.value for b in agg.occupied])
    out = []
    n_bins = len(agg.bins)
    for c in geometry.curb_centers():
        b = agg.bins[min(int(c / bin_m), n_bins - 1)]
        v = b.value
        frac_above = float(np.mean(values > v)) if not b.empty else 1.0
        out.append({"arc_m": float(c), "bin": b.index, "value": v, "fraction_above": frac_above,
                    "top_15pct": bool(not b.empty and v >= np.quantile(values, 0.85))})
    return out


def run_vae(data: ExperimentData, cfg: PipelineConfig, vaes: list[M.ConvVae] | None = None, beta: float | None = None,
            variant: int = 0, jobs: int = 1) -> tuple[dict, BinAggregate, list[M.ConvVae]]:
    """LOSO VAE training (unless given), per-user scores and the 5 m barrier bins."""
    folds = vae_fold_plan(data, cfg)
    if vaes is None:
        vaes = [v for v, _ in _jobs_map(_train_vae_job, [(i, f, cfg, beta, variant) for i, f in enumerate(folds)], jobs, data)]
    rows = [vae_fold(data, f, v) for f, v in zip(folds, vaes)]
    ws = data.vae_windows
    te = np.concatenate([f.test for f in folds])
    norm = np.concatenate([r.pop("normalized") for r in rows])
    for r in rows:
        r.pop("raw")
    bin_m = cfg.map.bin_m
    agg = bin_max_aggregate(norm, ws.lat[te], ws.lon[te], data.geometry, bin_m, cfg.map.max_distance_m)
    ranks = curb_bin_ranks(agg, data.geometry, bin_m)
    report = {
        "beta": cfg.vae.kl_beta if beta is None else float(beta),
        "folds": rows,
        "folds_curb_above_p90": int(sum(r["curb_above_p90"] for r in rows)),
        "n_folds": len(rows),
        "curb_bins": ranks,
        "curb_bins_top_15pct": int(sum(r["top_15pct"] for r in ranks)),
        "bins_occupied": len(agg.occupied),
        "bins_total": len(agg.bins),
        "dropped": agg.dropped,
    }
    return report, agg, vaes


def _train_vae_job(data, item):
    i, fold, cfg, beta, variant = item
    return train_vae_fold(data, fold, i, cfg, beta, variant)
