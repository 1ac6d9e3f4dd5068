"""Surface CNN, PosNet, ConvVAE and the MLP head, plus the shared training loop."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from curbsense.nn import functional as F
from curbsense.nn.graph import NonFiniteError, Sequential
from curbsense.nn.layers import (
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    ReLU,
    Reparameterize,
    Reshape,
    ShapeError,
    TransposedConv1d,
    Upsample1d,
)
from curbsense.nn.optim import AdamState, adam_step

log = logging.getLogger(__name__)

LOSS_KINDS = ("cross_entropy", "vae")


@dataclass(frozen=True)
class SurfaceCnnConfig:
    in_channels: int = 3
    window: int = 450
    kernel: int = 5
    feature_maps: tuple = (32, 64, 64, 128)
    dense_units: int = 500
    n_out: int = 4
    dropout: tuple = (0.2, 0.3, 0.3, 0.4, 0.5)

    def validate(self) -> None:
        if len(self.feature_maps) != 4:
            raise ShapeError("exactly 4 conv blocks required")
        if len(self.dropout) != 5:
            raise ShapeError("exactly 5 dropout rates required (4 conv blocks + dense)")
        if self.window // 2**4 < 1:
            raise ShapeError(f"window {self.window} too short for 4 pooling stages")
        if self.n_out < 2:
            raise ShapeError("need at least 2 output classes")


@dataclass(frozen=True)
class ConvVaeConfig:
    in_channels: int = 3
    window: int = 400
    kernel: int = 5
    feature_maps: tuple = (32, 64, 64, 128)
    decoder_maps: tuple = (128, 64, 64, 32)
    latent: int = 64
    beta: float | None = None  # None -> 1e-3 / latent

    @property
    def kl_beta(self) -> float:
        return 1e-3 / self.latent if self.beta is None else float(self.beta)

    def validate(self) -> None:
        depth = len(self.feature_maps)
        if self.window % 2**depth:
            raise ShapeError(f"window {self.window} not divisible by 2^{depth}")
        if len(self.decoder_maps) != depth:
            raise ShapeError("decoder needs one block per encoder block")
        if self.kl_beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    class_weighted: bool = True

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _conv_body(cfg, dropout: tuple | None):
    layers, names = [], []
    c = cfg.in_channels
    for i, m in enumerate(cfg.feature_maps, 1):
        layers += [Conv1d(c, m, cfg.kernel, "same"), ReLU(), MaxPool1d(2)]
        names += [f"conv{i}", f"relu{i}", f"pool{i}"]
        if dropout is not None:
            layers.append(Dropout(dropout[i - 1]))
            names.append(f"drop{i}")
        c = m
    length = cfg.window // 2 ** len(cfg.feature_maps)
    layers.append(Flatten())
    names.append("flatten")
    return layers, names, c * length


def build_surface_cnn(cfg: SurfaceCnnConfig = SurfaceCnnConfig(), seed: int = 0, dtype=np.float32) -> Sequential:
    """4 x (conv, relu, pool, dropout), flatten, dense 500 ("fc"), relu, dropout, linear output."""
    cfg.validate()
    layers, names, flat = _conv_body(cfg, cfg.dropout)
    layers += [Dense(flat, cfg.dense_units), ReLU(), Dropout(cfg.dropout[4]), Dense(cfg.dense_units, cfg.n_out)]
    names += ["fc", "fc_relu", "fc_drop", "out"]
    return Sequential(layers, (cfg.in_channels, cfg.window), names).init(seed, dtype)


def build_posnet(n_classes: int, cfg: SurfaceCnnConfig = SurfaceCnnConfig(), seed: int = 0, dtype=np.float32) -> Sequential:
    if n_classes < 2:
        raise ValueError(f"PosNet needs >= 2 grid classes, got {n_classes}")
    return build_surface_cnn(_replace(cfg, n_out=n_classes), seed, dtype)


def _replace(cfg, **kw):
    d = asdict(cfg)
    d.update(kw)
    return type(cfg)(**d)


class ConvVae:
    """Encoder, reparameterization and decoder sharing one layer list.

    ``graph`` is the full training chain; ``encoder`` maps (3, W) to the
    concatenated (mu, logvar) vector and ``decoder`` maps a latent vector back
    to (3, W).  In eval mode the chain uses z = mu.
    """

    def __init__(self, cfg: ConvVaeConfig = ConvVaeConfig(), seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        enc, enc_names, flat = _conv_body(cfg, None)
        enc.append(Dense(flat, 2 * cfg.latent))
        enc_names.append("latent")
        depth = len(cfg.feature_maps)
        short = cfg.window // 2**depth
        first = cfg.decoder_maps[0]
        dec = [Dense(cfg.latent, first * short), ReLU(), Reshape((first, short))]
        dec_names = ["dec_fc", "dec_fc_relu", "dec_reshape"]
        c = first
        for i, m in enumerate(cfg.decoder_maps, 1):
            dec += [TransposedConv1d(c, m, cfg.kernel, 1, "same"), ReLU(), Upsample1d(2)]
            dec_names += [f"deconv{i}", f"dec_relu{i}", f"up{i}"]
            c = m
        dec.append(Conv1d(c, cfg.in_channels, 1, "valid"))
        dec_names.append("recon")
        self.reparam = Reparameterize(cfg.latent, cfg.kl_beta)
        shape = (cfg.in_channels, cfg.window)
        self.graph = Sequential(enc + [self.reparam] + dec, shape, enc_names + ["reparam"] + dec_names).init(seed, dtype)
        self.encoder = Sequential(enc, shape, enc_names)
        self.decoder = Sequential(dec, (cfg.latent,), dec_names)
        self.encoder.dtype = self.decoder.dtype = self.graph.dtype

    def encode(self, x: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
        h = self.encoder.predict(x, batch_size)
        return h[:, : self.cfg.latent], h[:, self.cfg.latent :]

    def reconstruct(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        return self.graph.predict(x, batch_size)


def build_convvae(cfg: ConvVaeConfig = ConvVaeConfig(), seed: int = 0, dtype=np.float32) -> ConvVae:
    return ConvVae(cfg, seed, dtype)


def build_mlp(n_in: int, n_out: int, hidden: tuple = (500, 500), seed: int = 0, dtype=np.float32) -> Sequential:
    """Dense/ReLU stack used as the classification head on fixed features."""
    layers, names, prev = [], [], n_in
    for i, h in enumerate(hidden, 1):
        layers += [Dense(prev, h), ReLU()]
        names += [f"hidden{i}", f"hidden{i}_relu"]
        prev = h
    layers.append(Dense(prev, n_out))
    names.append("out")
    return Sequential(layers, (n_in,), names).init(seed, dtype)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def class_weights(y: np.ndarray, n_classes: int) -> np.ndarray:
    """w_c = N / (K * n_c) over classes present; absent classes get weight 1."""
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes).astype(np.float64)
    present = counts > 0
    w = np.ones(n_classes)
    w[present] = counts.sum() / (present.sum() * counts[present])
    return w


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_loss: float = float("inf")
    initial_train_loss: float = float("nan")
    final_train_loss: float = float("nan")
    class_weights: list | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.history)

    def write_history(self, path) -> None:
        with open(path, "w") as fh:
            for row in self.history:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _loss_head(kind: str, weights):
    if kind == "cross_entropy":
        return lambda out, y: F.softmax_cross_entropy(out, y, weights)
    return lambda out, x: F.mse_loss(out, x)


def evaluate_loss(graph: Sequential, x: np.ndarray, y, kind: str, weights=None, batch_size: int = 256) -> float:
    """Eval-mode mean loss over a dataset (KL term included for the VAE)."""
    head = _loss_head(kind, weights)
    total, n = 0.0, len(x)
    for i in range(0, n, batch_size):
        xb = x[i : i + batch_size]
        out = graph.forward(xb, train=False)
        tb = xb if kind == "vae" else y[i : i + batch_size]
        total += (head(out, tb)[0] + graph.aux_loss()) * len(xb)
    return total / n


def train_model(
    graph: Sequential,
    train: tuple,
    valid: tuple,
    cfg: TrainConfig = TrainConfig(),
    loss: str = "cross_entropy",
    n_classes: int | None = None,
) -> TrainResult:
    """Mini-batch Adam with early stopping on validation loss.

    ``train`` and ``valid`` are ``(X, y)`` pairs; for ``loss="vae"`` the
    targets are the inputs and ``y`` may be None.  The graph is left holding
    the parameters of the best validation epoch.
    """
    cfg.validate()
    if loss not in LOSS_KINDS:
        raise ValueError(f"loss must be one of {LOSS_KINDS}")
    xt, yt = train
    xv, yv = valid
    if len(xt) == 0 or len(xv) == 0:
        raise ValueError("training and validation splits must be nonempty")
    xt = np.asarray(xt, dtype=graph.dtype)
    xv = np.asarray(xv, dtype=graph.dtype)
    weights = None
    if loss == "cross_entropy":
        yt = np.asarray(yt, dtype=np.int64)
        yv = np.asarray(yv, dtype=np.int64)
        k = n_classes or graph.output_shape[0]
        weights = class_weights(yt, k) if cfg.class_weighted else np.ones(k)
    head = _loss_head(loss, weights)

    ss = np.random.SeedSequence(cfg.seed)
    order_ss, noise_ss = ss.spawn(2)
    order_rng = np.random.default_rng(order_ss)
    graph.reseed(noise_ss)
    state = AdamState(lr=cfg.lr)
    params = [p for _, p in graph.parameters()]

    res = TrainResult(class_weights=None if weights is None else weights.tolist())
    res.initial_train_loss = evaluate_loss(graph, xt, yt, loss, weights)
    best_state = graph.state_dict()
    stale = 0
    n = len(xt)
    for epoch in range(1, cfg.max_epochs + 1):
        perm = order_rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            xb = xt[idx]
            out = graph.forward(xb, train=True)
            target = xb if loss == "vae" else yt[idx]
            try:
                lval, grad = head(out, target)
            except FloatingPointError:
                lval, grad = float("nan"), None
            lval += graph.aux_loss()
            if not np.isfinite(lval):
                raise _diverged(graph, xb, epoch)
            graph.backward(grad)
            adam_step(params, [g for _, g in graph.gradients()], state)
            total += lval * len(idx)
        train_loss = total / n
        valid_loss = evaluate_loss(graph, xv, yv, loss, weights)
        if not np.isfinite(valid_loss):
            raise NonFiniteError(f"non-finite validation loss at epoch {epoch}", layer="loss", epoch=epoch)
        res.history.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss})
        log.debug("epoch %d train %.5f valid %.5f", epoch, train_loss, valid_loss)
        if valid_loss < res.best_valid_loss:
            res.best_valid_loss, res.best_epoch = valid_loss, epoch
            best_state = graph.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    graph.load_state_dict(best_state)
    res.final_train_loss = evaluate_loss(graph, xt, yt, loss, weights)
    return res


def _diverged(graph: Sequential, xb: np.ndarray, epoch: int) -> NonFiniteError:
    try:
        graph.forward(xb, train=False, check_finite=True)
    except NonFiniteError as exc:
        return NonFiniteError(f"training diverged at epoch {epoch}: {exc}", layer=exc.layer, epoch=epoch)
    return NonFiniteError(f"training diverged at epoch {epoch}: non-finite loss", layer="loss", epoch=epoch)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def predict_proba(graph: Sequential, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Class distribution per window (eval mode); accepts one (C, L) window or a batch."""
    x = np.asarray(windows)
    single = x.shape == graph.input_shape
    if single:
        x = x[None]
    if x.shape[1:] != graph.input_shape:
        raise ShapeError(f"window shape {x.shape[1:]} != model input {graph.input_shape}")
    p = F.softmax(graph.predict(x, batch_size).astype(np.float64))
    return p[0] if single else p


def extract_fc_features(graph: Sequential, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Post-ReLU activations of the 500-unit "fc" layer."""
    if "fc_relu" not in graph.names:
        raise ShapeError("model has no fc layer")
    x = np.asarray(windows)
    single = x.shape == graph.input_shape
    out = graph.predict(x[None] if single else x, batch_size, stop="fc_relu")
    return out[0] if single else out


def vae_reconstruction_error(vae: ConvVae, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Per-window MSE between input and its z = mu reconstruction."""
    x = np.asarray(windows, dtype=vae.graph.dtype)
    single = x.ndim == 2
    if single:
        x = x[None]
    rec = vae.reconstruct(x, batch_size)
    err = np.mean((rec.astype(np.float64) - x) ** 2, axis=(1, 2))
    return err[0] if single else err


def model_provenance(cfg, train_cfg: TrainConfig | None = None, **extra) -> dict:
    out = {"model": type(cfg).__name__, "config": asdict(cfg)}
    if train_cfg is not None:
        out["train"] = asdict(train_cfg)
    out.update(extra)
    return out


def history_path(path) -> Path:
    p = Path(path)
    return p.with_suffix(".history.jsonl")
