"""Central finite-difference verification of :func:`backprop`."""

from __future__ import annotations

import numpy as np

from curbsense.nn import functional as F
from curbsense.nn.graph import Sequential, backprop
from curbsense.nn.layers import (
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    MaxPool1d,
    ReLU,
    Reparameterize,
    Reshape,
    TransposedConv1d,
    Upsample1d,
)

LAYER_KINDS = (
    "conv1d",
    "transposed_conv1d",
    "maxpool1d",
    "upsample1d",
    "dense",
    "relu",
    "dropout",
    "flatten",
    "reshape",
    "reparameterize",
)
LOSS_KINDS = ("cross_entropy", "mse")


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den < 1e-12 else float(np.linalg.norm(a - b) / den)


def gradient_error(graph: Sequential, x: np.ndarray, loss_head, noise_seed: int = 0, h: float = 1e-5,
                   entries: int = 16, rng: np.random.Generator | None = None) -> float:
    """Largest norm-relative error between analytic and central-difference gradients.

    Covers up to ``entries`` randomly chosen coordinates of every parameter
    tensor and of the input.  Stochastic layers are reseeded before every
    forward pass so masks and latent noise are held fixed.
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)

    def loss_at() -> float:
        graph.reseed(noise_seed)
        out = graph.forward(x, train=True)
        return float(loss_head(out)[0]) + graph.aux_loss()

    graph.reseed(noise_seed)
    _, grads = backprop(graph, x, loss_head)
    graph.reseed(noise_seed)
    out = graph.forward(x, train=True)
    dx = graph.backward(loss_head(out)[1])

    targets = [(v, grads[k]) for k, v in graph.parameters()] + [(x, dx)]
    worst = 0.0
    for arr, analytic in targets:
        flat = arr.reshape(-1)
        pick = rng.choice(flat.size, size=min(entries, flat.size), replace=False)
        num = np.empty(pick.size)
        for j, i in enumerate(pick):
            old = flat[i]
            flat[i] = old + h
            up = loss_at()
            flat[i] = old - h
            down = loss_at()
            flat[i] = old
            num[j] = (up - down) / (2 * h)
        worst = max(worst, _rel(analytic.reshape(-1)[pick], num))
    return worst


def random_case(kind: str, loss: str, seed: int):
    """A small random graph exercising ``kind``, an input batch and a loss head."""
    rng = np.random.default_rng(seed)
    bsz = int(rng.integers(2, 4))
    c = int(rng.integers(1, 4))
    length = int(rng.integers(6, 13))
    k = int(rng.integers(1, 6))
    seq = (c, length)
    layers: list = []
    in_shape: tuple = seq
    if kind == "conv1d":
        pad = str(rng.choice(["valid", "same"]))
        k = min(k, length)
        layers = [Conv1d(c, int(rng.integers(1, 4)), k, pad)]
    elif kind == "transposed_conv1d":
        stride = int(rng.integers(1, 4))
        pad = "same" if stride == 1 and rng.random() < 0.5 else "valid"
        layers = [TransposedConv1d(c, int(rng.integers(1, 4)), k, stride, pad)]
    elif kind == "maxpool1d":
        pool = int(rng.integers(1, 4))
        layers = [Conv1d(c, 2, 3, "same"), MaxPool1d(pool, int(rng.integers(1, 4)))]
    elif kind == "upsample1d":
        layers = [Conv1d(c, 2, 3, "same"), Upsample1d(int(rng.integers(1, 4)))]
    elif kind == "dense":
        in_shape = (int(rng.integers(2, 8)),)
        layers = [Dense(in_shape[0], int(rng.integers(2, 8)))]
    elif kind == "relu":
        layers = [Conv1d(c, 2, 3, "same"), ReLU()]
    elif kind == "dropout":
        layers = [Conv1d(c, 2, 3, "same"), Dropout(float(rng.uniform(0.1, 0.6)))]
    elif kind == "flatten":
        layers = [Flatten()]
    elif kind == "reshape":
        in_shape = (int(rng.integers(2, 6)),)
        layers = [Dense(in_shape[0], c * length), Reshape(seq), Conv1d(c, 2, min(k, length), "valid")]
    elif kind == "reparameterize":
        in_shape = (int(rng.integers(2, 6)),)
        d = int(rng.integers(1, 4))
        layers = [Dense(in_shape[0], 2 * d), Reparameterize(d, beta=float(rng.uniform(0.1, 1.0)))]
    else:
        raise ValueError(f"unknown layer kind {kind!r}")

    probe = Sequential(layers, in_shape)
    if len(probe.output_shape) == 2:
        layers.append(Flatten())
    flat = int(np.prod(Sequential(layers, in_shape).output_shape))
    n_out = int(rng.integers(2, 5))
    layers.append(Dense(flat, n_out))
    graph = Sequential(layers, in_shape).init(seed, np.float64)
    # nonzero biases so every bias path is exercised
    for layer in graph.layers:
        if "b" in layer.params:
            layer.params["b"] = rng.normal(0, 0.5, layer.params["b"].shape)
    x = rng.normal(size=(bsz,) + in_shape)

    if loss == "cross_entropy":
        y = rng.integers(0, n_out, bsz)
        w = rng.uniform(0.5, 2.0, n_out)
        head = lambda out: F.softmax_cross_entropy(out, y, w)  # noqa: E731
    elif loss == "mse":
        target = rng.normal(size=(bsz, n_out))
        head = lambda out: F.mse_loss(out, target)  # noqa: E731
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return graph, x, head


def run_gradient_suite(n_seeds: int = 20, seed0: int = 0) -> dict[tuple[str, str], float]:
    """Worst gradient error per (layer kind, loss) over ``n_seeds`` random cases."""
    worst: dict[tuple[str, str], float] = {}
    for kind in LAYER_KINDS:
        for loss in LOSS_KINDS:
            errs = []
            for s in range(seed0, seed0 + n_seeds):
                graph, x, head = random_case(kind, loss, s)
                errs.append(gradient_error(graph, x, head, noise_seed=s, rng=np.random.default_rng(s)))
            worst[(kind, loss)] = max(errs)
    return worst


def adjoint_gap(seed: int) -> float:
    """|<conv(x), y> - <x, conv^T(y)>| relative to the magnitudes, for a random shape draw."""
    rng = np.random.default_rng(seed)
    bsz = int(rng.integers(1, 4))
    cin, cout = (int(v) for v in rng.integers(1, 6, 2))
    length = int(rng.integers(5, 40))
    k = int(rng.integers(1, min(length, 7) + 1))
    pad = "same" if rng.random() < 0.5 else "valid"
    w = rng.normal(size=(cout, cin, k))
    x = rng.normal(size=(bsz, cin, length))
    fx, _ = F.conv1d_forward(x, w, np.zeros(cout), pad)
    y = rng.normal(size=fx.shape)
    ty, _ = F.transposed_conv1d_forward(y, w, np.zeros(cin), 1, pad)
    lhs = float(np.sum(fx * y))
    rhs = float(np.sum(x * ty))
    return abs(lhs - rhs) / max(1.0, abs(lhs))
