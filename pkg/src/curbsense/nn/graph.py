"""Layer sequences with reverse-mode differentiation."""

from __future__ import annotations

from typing import Callable

import numpy as np

from curbsense.nn.layers import Layer, Reparameterize, ShapeError


def _swap(x: np.ndarray) -> np.ndarray:
    # (B, C, L) <-> (B, L, C); vectors pass through
    return np.ascontiguousarray(x.transpose(0, 2, 1)) if x.ndim == 3 else x


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN/inf; ``layer`` names the culprit."""

    def __init__(self, message: str, layer: str | None = None, epoch: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch


class Sequential:
    """A fixed chain of layers over inputs of shape ``input_shape`` (no batch axis)."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], names: list[str] | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.names = list(names) if names is not None else [f"{i}:{l.kind}" for i, l in enumerate(self.layers)]
        if len(self.names) != len(self.layers):
            raise ValueError("one name per layer")
        self.shapes = self._infer_shapes()
        self.dtype = np.float64

    def _infer_shapes(self) -> list[tuple]:
        shape = self.input_shape
        shapes = [shape]
        for name, layer in zip(self.names, self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {name}: {exc}") from None
            shapes.append(shape)
        return shapes

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def index(self, name: str) -> int:
        return self.names.index(name)

    # -- parameters --------------------------------------------------------

    def init(self, seed: int, dtype=np.float64) -> "Sequential":
        """Draw initial parameters and give every stochastic layer its own RNG stream."""
        self.dtype = np.dtype(dtype).type
        ss = np.random.SeedSequence(int(seed))
        param_ss, noise_ss = ss.spawn(2)
        rng = np.random.default_rng(param_ss)
        for layer in self.layers:
            layer.init_params(rng, self.dtype)
        self.reseed(noise_ss)
        return self

    def reseed(self, seed) -> None:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
        stochastic = [l for l in self.layers if l.stochastic]
        for layer, child in zip(stochastic, ss.spawn(len(stochastic))):
            layer.rng = np.random.default_rng(child)

    def astype(self, dtype) -> "Sequential":
        self.dtype = np.dtype(dtype).type
        for layer in self.layers:
            for k, v in layer.params.items():
                layer.params[k] = v.astype(self.dtype)
        return self

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{n}.{k}", v) for n, l in zip(self.names, self.layers) for k, v in l.params.items()]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{n}.{k}", l.grads[k]) for n, l in zip(self.names, self.layers) for k in l.param_names]

    def num_params(self) -> int:
        return int(sum(v.size for _, v in self.parameters()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, layer in zip(self.names, self.layers):
            for k in layer.param_names:
                src = state[f"{n}.{k}"]
                cur = layer.params.get(k)
                if cur is not None and src.shape != cur.shape:
                    raise ShapeError(f"{n}.{k}: stored shape {src.shape} != model shape {cur.shape}")
                layer.params[k] = np.array(src, dtype=self.dtype)

    def describe(self) -> list[dict]:
        return [
            {"name": n, "kind": l.kind, "hyper": l.hyper(), "params": [[k, list(v.shape)] for k, v in l.params.items()]}
            for n, l in zip(self.names, self.layers)
        ]

    def architecture(self) -> list[tuple[str, str, dict]]:
        return [(n, l.kind, l.hyper()) for n, l in zip(self.names, self.layers)]

    # -- passes ------------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, stop: str | None = None, check_finite: bool = False) -> np.ndarray:
        """Run the chain on ``(B, *input_shape)``; ``stop`` ends after the named layer."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != {self.input_shape}")
        x = _swap(x)
        for name, layer in zip(self.names, self.layers):
            x = layer.forward(x, train)
            if check_finite and not np.all(np.isfinite(x)):
                raise NonFiniteError(f"non-finite output from layer {name}", layer=name)
            if name == stop:
                break
        return _swap(x)

    def backward(self, grad: np.ndarray, check_finite: bool = False) -> np.ndarray:
        """Backpropagate ``dloss/doutput`` (channel-major like the output) and return ``dloss/dinput``."""
        grad = _swap(np.asarray(grad, dtype=self.dtype))
        for name, layer in zip(reversed(self.names), reversed(self.layers)):
            grad = layer.backward(grad)
            if check_finite and not np.all(np.isfinite(grad)):
                raise NonFiniteError(f"non-finite gradient from layer {name}", layer=name)
        return _swap(grad)

    def aux_loss(self) -> float:
        return float(sum(l.aux_loss for l in self.layers if isinstance(l, Reparameterize)))

    def predict(self, x: np.ndarray, batch_size: int = 256, stop: str | None = None) -> np.ndarray:
        outs = [self.forward(x[i : i + batch_size], train=False, stop=stop) for i in range(0, len(x), batch_size)]
        if not outs:
            shape = self.shapes[self.index(stop) + 1] if stop else self.output_shape
            return np.zeros((0,) + tuple(shape), dtype=self.dtype)
        return np.concatenate(outs)

    def __repr__(self) -> str:
        body = "\n".join(f"  {n}: {l!r} -> {s}" for n, l, s in zip(self.names, self.layers, self.shapes[1:]))
        return f"Sequential(input={self.input_shape}\n{body}\n)"


ModelGraph = Sequential

LossHead = Callable[[np.ndarray], tuple[float, np.ndarray]]


def backprop(graph: Sequential, x: np.ndarray, loss_head: LossHead, train: bool = True) -> tuple[float, dict[str, np.ndarray]]:
    """Scalar loss and exact gradients for every parameter of ``graph``.

    ``loss_head`` maps the graph output to ``(loss, dloss/doutput)``.  Any
    latent KL penalty carried by the graph is included in the loss.  Stochastic
    layers draw from their current RNG streams; reseed the graph to hold them
    fixed across calls.
    """
    out = graph.forward(x, train=train, check_finite=True)
    loss, grad = loss_head(out)
    loss = float(loss) + graph.aux_loss()
    if not np.isfinite(loss):
        raise NonFiniteError("non-finite loss", layer="loss")
    graph.backward(grad, check_finite=True)
    return loss, dict(graph.gradients())
