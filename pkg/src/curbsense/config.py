"""Pipeline configuration: JSON file, defaults filled, unknown keys rejected."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from curbsense.models import ConvVaeConfig, SurfaceCnnConfig, TrainConfig


class ConfigError(ValueError):
    pass


DEFAULT_PALETTE = (
    "#1F77B4", "#FF7F0E", "#2CA02C", "#D62728", "#9467BD", "#8C564B", "#E377C2", "#7F7F7F",
    "#BCBD22", "#17BECF", "#393B79", "#637939", "#8C6D31", "#843C39", "#7B4173", "#3182BD",
)


@dataclass(frozen=True)
class WindowOptions:
    classifier: int = 450
    vae: int = 400
    overlap: float = 0.9
    filter_length: int = 5


@dataclass(frozen=True)
class StageTrain:
    """Training options of one model kind; seeds derive from the master seed."""

    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    class_weighted: bool = True

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(self.lr, self.batch_size, self.max_epochs, self.patience, int(seed), self.class_weighted)


@dataclass(frozen=True)
class TrainOptions:
    cnn: StageTrain = StageTrain()
    posnet: StageTrain = StageTrain(class_weighted=False)
    vae: StageTrain = StageTrain(class_weighted=False)
    mlp: StageTrain = StageTrain()


@dataclass(frozen=True)
class EvalOptions:
    valid_fraction: float = 0.1
    train_subsample: int = 1  # keep every n-th training window for network training
    smoothing_length: int = 7
    knn_ks: tuple = (1, 3, 5, 7, 9)
    knn_cv_max: int = 5000  # windows used when choosing k
    cv_folds: int = 5
    logreg_Cs: tuple = (0.01, 0.1, 1.0, 10.0, 100.0)
    logreg_lr: float = 0.05
    logreg_max_steps: int = 5000
    logreg_tol: float = 1e-5
    logreg_cv_max: int = 0  # windows used when choosing C; 0 = all
    logreg_cv_once: bool = False  # choose C on the first fold and reuse it
    fft_bands: int = 32
    grid_cell_m: float = 5.0
    grid_fallback_m: float = 10.0
    kmeans_k: int = 16
    kmeans_restarts: int = 10
    subsets: tuple = (1.0, 0.6, 0.2, 0.1, 0.05, 0.02)
    subset_min_steps: int = 0  # lower bound on optimizer steps for subset CNNs
    mlp_hidden: tuple = (500, 500)
    vae_betas: tuple = (None, 0.0)  # None = default KL weight
    max_folds: int | None = None  # evaluate only the first n LOSO folds

    def validate(self) -> None:
        if not 0 < self.valid_fraction < 1:
            raise ConfigError("evaluation.valid_fraction must lie in (0, 1)")
        if self.train_subsample < 1:
            raise ConfigError("evaluation.train_subsample must be >= 1")
        if self.smoothing_length < 1 or self.smoothing_length % 2 == 0:
            raise ConfigError("evaluation.smoothing_length must be odd and >= 1")
        if not self.subsets or any(not 0 < s <= 1 for s in self.subsets):
            raise ConfigError("evaluation.subsets must be fractions in (0, 1]")
        if self.kmeans_k < 1 or self.kmeans_restarts < 1:
            raise ConfigError("evaluation.kmeans_k and kmeans_restarts must be >= 1")
        if self.max_folds is not None and self.max_folds < 1:
            raise ConfigError("evaluation.max_folds must be >= 1")


@dataclass(frozen=True)
class MapOptions:
    bin_m: float = 5.0
    max_distance_m: float = 25.0
    palette: tuple = DEFAULT_PALETTE


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    route: str | None = None  # route JSON; None = packaged default route
    users: str | None = None  # user-profile JSON; None = packaged defaults
    laps: tuple = (1, 2, 3)
    out: str = "out"
    window: WindowOptions = WindowOptions()
    cnn: SurfaceCnnConfig = SurfaceCnnConfig()
    vae: ConvVaeConfig = ConvVaeConfig()
    train: TrainOptions = TrainOptions()
    evaluation: EvalOptions = EvalOptions()
    map: MapOptions = MapOptions()

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=int(seed))

    def with_out(self, out) -> "PipelineConfig":
        return replace(self, out=str(out))

    def validate(self) -> None:
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not self.laps:
            raise ConfigError("laps must be nonempty")
        for name in ("route", "users"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{name}: file not found: {p}")
        if self.window.classifier != self.cnn.window:
            raise ConfigError("window.classifier must equal cnn.window")
        if self.window.vae != self.vae.window:
            raise ConfigError("window.vae must equal vae.window")
        if not 0 <= self.window.overlap < 1:
            raise ConfigError("window.overlap must lie in [0, 1)")
        if len(self.map.palette) < self.evaluation.kmeans_k:
            raise ConfigError("map.palette needs one color per k-means cluster")
        self.cnn.validate()
        self.vae.validate()
        self.evaluation.validate()
        for stage in fields(TrainOptions):
            st = getattr(self.train, stage.name)
            try:
                st.to_train_config(self.seed).validate()
            except ValueError as exc:
                raise ConfigError(f"train.{stage.name}: {exc}") from None


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _build(cls, data, where: str):
    """Instantiate dataclass ``cls`` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key: {where + '.' if where else ''}{key}")
    kw = {}
    for name, f in known.items():
        if name not in data:
            continue
        v = data[name]
        default = f.default
        path = f"{where}.{name}" if where else name
        if is_dataclass(default):
            kw[name] = _build(type(default), v, path)
        elif isinstance(default, tuple) and isinstance(v, list):
            kw[name] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
        else:
            kw[name] = v
    return cls(**kw)


def config_from_dict(data: dict, base_dir: str | Path | None = None) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    if "seed" not in data or data["seed"] is None:
        raise ConfigError("missing required config field: seed")
    data = dict(data)
    if base_dir is not None:
        for name in ("route", "users"):
            if data.get(name) is not None and not Path(data[name]).is_absolute():
                data[name] = str(Path(base_dir) / data[name])
    try:
        cfg = _build(PipelineConfig, data, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)


def default_config(seed: int) -> PipelineConfig:
    cfg = PipelineConfig(seed=int(seed))
    cfg.validate()
    return cfg
