"""File-based pipeline stages: each reads earlier artifacts from the output directory and writes its own."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from curbsense import models as M
from curbsense.accessibility_map import cluster_points, emit_geojson, emit_svg_overview
from curbsense.config import PipelineConfig
from curbsense.evaluation import experiments as E
from curbsense.nn.store import load_model, save_model
from curbsense.roadsim import load_profiles, load_route, save_profiles, save_route
from curbsense.signal_core import WindowSet, load_recordings, save_recording
from curbsense.weak_supervision import GridIndex

log = logging.getLogger(__name__)

STAGES = ("simulate", "preprocess", "train-cnn", "train-posnet", "train-vae", "evaluate", "semi-supervised", "cluster", "map")


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: Path, stage: str):
        super().__init__(f"missing artifact: {path} (produced by the '{stage}' stage)")
        self.path = path
        self.stage = stage


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


class Workspace:
    """Output directory layout plus the artifact manifest."""

    def __init__(self, cfg: PipelineConfig, out: Path | str | None = None):
        self.cfg = cfg
        self.root = Path(out if out is not None else cfg.out)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hash = cfg.hash()

    # layout
    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @property
    def recordings_dir(self) -> Path:
        return self.path("recordings")

    def windows_path(self, kind: str) -> Path:
        return self.path("windows", f"{kind}.npz")

    def model_path(self, kind: str, fold: int) -> Path:
        return self.path("models", f"{kind}_fold{fold}.csws")

    def grid_path(self, fold: int) -> Path:
        return self.path("grids", f"grid_fold{fold}.txt")

    def metrics_path(self, name: str) -> Path:
        return self.path("metrics", f"{name}.json")

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise MissingArtifactError(path, stage)
        return path

    # manifest: one entry per stage; timing lives in a separate file
    @property
    def manifest_path(self) -> Path:
        return self.path("manifest.json")

    def _load_json(self, path: Path) -> dict:
        return json.loads(path.read_text()) if path.exists() else {}

    def record(self, stage: str, inputs: list[Path], outputs: list[Path], seconds: float) -> None:
        man = self._load_json(self.manifest_path)
        man.setdefault("stages", {})
        rel = lambda ps: sorted(str(p.relative_to(self.root)) for p in ps)  # noqa: E731
        man["stages"][stage] = {"config_hash": self.hash, "seed": self.cfg.seed, "inputs": rel(inputs), "outputs": rel(outputs)}
        man["config_hash"] = self.hash
        man["seed"] = self.cfg.seed
        write_json(self.manifest_path, man)
        timing = self._load_json(self.path("timing.json"))
        timing[stage] = round(seconds, 3)
        write_json(self.path("timing.json"), timing)


# ---------------------------------------------------------------------------
# loading helpers
# ---------------------------------------------------------------------------


def _recordings(ws: Workspace):
    d = ws.require(ws.recordings_dir, "simulate")
    recs = load_recordings(d)
    if not recs:
        raise MissingArtifactError(d / "<user>_<lap>.csv", "simulate")
    return recs


def _data(ws: Workspace) -> E.ExperimentData:
    recs = _recordings(ws)
    cls = WindowSet.load(ws.require(ws.windows_path("classifier"), "preprocess"))
    vae = WindowSet.load(ws.require(ws.windows_path("vae"), "preprocess"))
    return E.prepare_data(ws.cfg, recs, (cls, vae))


def _load_cnn(ws: Workspace, kind: str, fold: int, n_out: int):
    path = ws.require(ws.model_path(kind, fold), "train-" + kind)
    expect = M.build_surface_cnn(replace(ws.cfg.cnn, n_out=n_out))
    graph, _ = load_model(path, expect=expect)
    return graph, path


def _vae_variants(cfg: PipelineConfig) -> list[tuple[str, float | None, int]]:
    """(model tag, beta, variant index) for every configured KL weight."""
    out = []
    for j, beta in enumerate(cfg.evaluation.vae_betas):
        tag = "vae" if beta is None else f"vae_beta{beta:g}"
        out.append((tag, beta, j))
    return out


def _load_vae(ws: Workspace, tag: str, beta, fold: int):
    path = ws.require(ws.model_path(tag, fold), "train-vae")
    vcfg = ws.cfg.vae if beta is None else replace(ws.cfg.vae, beta=beta)
    vae = M.build_convvae(vcfg)
    graph, _ = load_model(path, expect=vae.graph)
    vae.graph.load_state_dict(graph.state_dict())
    return vae, path


def _provenance(ws: Workspace, fold, **extra) -> dict:
    return {"config_hash": ws.hash, "seed": ws.cfg.seed, "fold": fold.test_user, **extra}


# ---------------------------------------------------------------------------
# stages: each returns (inputs, outputs)
# ---------------------------------------------------------------------------


def stage_simulate(ws: Workspace, jobs: int = 1):
    cfg = ws.cfg
    recs = E.simulate(cfg)
    ws.recordings_dir.mkdir(parents=True, exist_ok=True)
    for old in ws.recordings_dir.glob("*.csv"):
        old.unlink()
    outs = [save_recording(r, ws.recordings_dir) for r in recs]
    route_p, users_p = ws.path("route.json"), ws.path("users.json")
    save_route(load_route(cfg.route), route_p)
    save_profiles(load_profiles(cfg.users), users_p)
    return [], outs + [route_p, users_p]


def stage_preprocess(ws: Workspace, jobs: int = 1):
    recs = _recordings(ws)
    cls, vae = E.window_sets(recs, ws.cfg)
    outs = []
    for kind, s in (("classifier", cls), ("vae", vae)):
        p = ws.windows_path(kind)
        p.parent.mkdir(parents=True, exist_ok=True)
        s.save(p)
        outs.append(p)
    return sorted(ws.recordings_dir.glob("*.csv")), outs


def stage_train_cnn(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    folds = E.fold_plan(data.windows, ws.cfg)
    trained = E._jobs_map(E._train_cnn_job, [(i, f, ws.cfg) for i, f in enumerate(folds)], jobs, data)
    outs = []
    for i, (fold, (graph, res)) in enumerate(zip(folds, trained)):
        p = ws.model_path("cnn", i)
        p.parent.mkdir(parents=True, exist_ok=True)
        save_model(graph, p, _provenance(ws, fold, model="surface_cnn", best_epoch=res.best_epoch))
        res.write_history(M.history_path(p))
        outs += [p, M.history_path(p)]
    return [ws.windows_path("classifier")], outs


def stage_train_posnet(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    folds = E.fold_plan(data.windows, ws.cfg)
    trained = E._jobs_map(E._train_posnet_job, [(i, f, ws.cfg) for i, f in enumerate(folds)], jobs, data)
    outs = []
    for i, (fold, (graph, grid, res)) in enumerate(zip(folds, trained)):
        gp = ws.grid_path(i)
        gp.parent.mkdir(parents=True, exist_ok=True)
        grid.save(gp)
        p = ws.model_path("posnet", i)
        p.parent.mkdir(parents=True, exist_ok=True)
        save_model(graph, p, _provenance(ws, fold, model="posnet", grid_cells=grid.count, best_epoch=res.best_epoch))
        res.write_history(M.history_path(p))
        outs += [gp, p, M.history_path(p)]
    return [ws.windows_path("classifier"), ws.recordings_dir], outs


def stage_train_vae(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    folds = E.vae_fold_plan(data, ws.cfg)
    outs = []
    for tag, beta, j in _vae_variants(ws.cfg):
        items = [(i, f, ws.cfg, beta, j) for i, f in enumerate(folds)]
        trained = E._jobs_map(E._train_vae_job, items, jobs, data)
        for i, (fold, (vae, res)) in enumerate(zip(folds, trained)):
            p = ws.model_path(tag, i)
            p.parent.mkdir(parents=True, exist_ok=True)
            save_model(vae.graph, p, _provenance(ws, fold, model="convvae", beta=vae.cfg.kl_beta, best_epoch=res.best_epoch))
            res.write_history(M.history_path(p))
            outs += [p, M.history_path(p)]
    return [ws.windows_path("vae")], outs


def _posnets(ws: Workspace, data: E.ExperimentData):
    folds = E.fold_plan(data.windows, ws.cfg)
    posnets, grids, paths = [], [], []
    for i in range(len(folds)):
        grid = GridIndex.load(ws.require(ws.grid_path(i), "train-posnet"))
        graph, p = _load_cnn(ws, "posnet", i, grid.count)
        posnets.append(graph)
        grids.append(grid)
        paths += [p, ws.grid_path(i)]
    return posnets, grids, paths


def stage_evaluate(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    folds = E.fold_plan(data.windows, ws.cfg)
    cnns, inputs = [], [ws.windows_path("classifier")]
    for i in range(len(folds)):
        g, p = _load_cnn(ws, "cnn", i, ws.cfg.cnn.n_out)
        cnns.append(g)
        inputs.append(p)
    sup = E.run_supervised(data, ws.cfg, cnns, jobs)
    posnets, grids, paths = _posnets(ws, data)
    pos, _, _ = E.run_posnet(data, ws.cfg, (posnets, grids), jobs)
    outs = [write_json(ws.metrics_path("supervised"), sup), write_json(ws.metrics_path("posnet"), pos)]
    table = ws.path("reports", "table1.txt")
    table.parent.mkdir(parents=True, exist_ok=True)
    table.write_text(E.format_table(sup))
    return inputs + paths, outs + [table]


def stage_semi_supervised(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    posnets, _, paths = _posnets(ws, data)
    sup_path = ws.metrics_path("supervised")
    sup = json.loads(ws.require(sup_path, "evaluate").read_text())
    rep = E.run_semi_supervised(data, ws.cfg, posnets, sup, jobs)
    txt = ws.path("reports", "semi_supervised.txt")
    txt.parent.mkdir(parents=True, exist_ok=True)
    txt.write_text(E.format_curve(rep))
    return paths + [sup_path], [write_json(ws.metrics_path("semi_supervised"), rep), txt]


def stage_cluster(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    posnets, _, paths = _posnets(ws, data)
    rep = E.run_clustering(data, ws.cfg, posnets, jobs)
    folds = E.fold_plan(data.windows, ws.cfg)
    te = np.concatenate([f.test for f in folds])
    labels = np.concatenate([r.pop("labels") for r in rep["folds"]])
    w = data.windows
    pts = cluster_points(w.lat[te], w.lon[te], labels, w.user[te], w.lap[te])
    palette = tuple(ws.cfg.map.palette)
    gj = emit_geojson(pts, _mkparent(ws.path("maps", "clusters.geojson")), palette)
    svg = emit_svg_overview(pts, data.geometry, ws.path("maps", "clusters.svg"), palette)
    return paths, [write_json(ws.metrics_path("clusters"), rep), gj, svg]


def stage_map(ws: Workspace, jobs: int = 1):
    data = _data(ws)
    folds = E.vae_fold_plan(data, ws.cfg)
    inputs, outs = [ws.windows_path("vae")], []
    for tag, beta, j in _vae_variants(ws.cfg):
        vaes = []
        for i in range(len(folds)):
            v, p = _load_vae(ws, tag, beta, i)
            vaes.append(v)
            inputs.append(p)
        rep, agg, _ = E.run_vae(data, ws.cfg, vaes, beta, j)
        outs.append(write_json(ws.metrics_path(tag), rep))
        gj = emit_geojson(agg.bins, _mkparent(ws.path("maps", f"barriers_{tag}.geojson")))
        svg = emit_svg_overview(agg.bins, data.geometry, ws.path("maps", f"barriers_{tag}.svg"))
        outs += [gj, svg]
    return inputs, outs


def _mkparent(p: Path) -> Path:
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


STAGE_FUNCS = {
    "simulate": stage_simulate,
    "preprocess": stage_preprocess,
    "train-cnn": stage_train_cnn,
    "train-posnet": stage_train_posnet,
    "train-vae": stage_train_vae,
    "evaluate": stage_evaluate,
    "semi-supervised": stage_semi_supervised,
    "cluster": stage_cluster,
    "map": stage_map,
}


def run_stage(ws: Workspace, stage: str, jobs: int = 1) -> list[Path]:
    t0 = time.perf_counter()
    log.info("stage %s", stage)
    inputs, outputs = STAGE_FUNCS[stage](ws, jobs)
    ws.record(stage, inputs, outputs, time.perf_counter() - t0)
    return outputs


def run_all(ws: Workspace, jobs: int = 1) -> None:
    for stage in STAGES:
        run_stage(ws, stage, jobs)
