"""Layer objects: parameters, cached activations and the backward rule.

Shapes are declared channel-major, ``(C, L)`` or ``(F,)``, but sequence
tensors flow between layers time-major as ``(B, L, C)``; :class:`Sequential`
transposes at the graph boundary.
"""

from __future__ import annotations

import numpy as np

from curbsense.nn import functional as F


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"
    stochastic = False
    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.rng: np.random.Generator | None = None
        self.aux_loss = 0.0

    def hyper(self) -> dict:
        return {}

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self) -> str:
        h = ", ".join(f"{k}={v}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({h})"


def _glorot(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv1d(Layer):
    kind = "conv1d"
    param_names = ("w", "b")

    def __init__(self, in_channels: int, out_channels: int, kernel: int, padding: str = "same"):
        super().__init__()
        self.in_channels, self.out_channels, self.kernel, self.padding = in_channels, out_channels, kernel, padding

    def hyper(self):
        return {"in_channels": self.in_channels, "out_channels": self.out_channels, "kernel": self.kernel, "padding": self.padding}

    def output_shape(self, shape):
        c, length = shape
        if c != self.in_channels:
            raise ShapeError(f"conv1d expects {self.in_channels} channels, got {c}")
        out_len = length if self.padding == "same" else length - self.kernel + 1
        if out_len < 1:
            raise ShapeError("conv1d kernel longer than input")
        return (self.out_channels, out_len)

    def init_params(self, rng, dtype):
        k = self.kernel
        self.params["w"] = _glorot(rng, (self.out_channels, self.in_channels, k), self.in_channels * k, self.out_channels * k, dtype)
        self.params["b"] = np.zeros(self.out_channels, dtype=dtype)

    def forward(self, x, train=False):
        out, self._cache = F.conv1d_tm_forward(x, self.params["w"], self.params["b"], self.padding)
        return out

    def backward(self, grad):
        dx, self.grads["w"], self.grads["b"] = F.conv1d_tm_backward(grad, self._cache, self.params["w"])
        self._cache = None
        return dx


class TransposedConv1d(Layer):
    kind = "transposed_conv1d"
    param_names = ("w", "b")

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: str = "same"):
        super().__init__()
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.stride, self.padding = stride, padding

    def hyper(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
        }

    def output_shape(self, shape):
        c, length = shape
        if c != self.in_channels:
            raise ShapeError(f"transposed_conv1d expects {self.in_channels} channels, got {c}")
        if self.padding == "same":
            return (self.out_channels, length)
        return (self.out_channels, (length - 1) * self.stride + self.kernel)

    def init_params(self, rng, dtype):
        k = self.kernel
        self.params["w"] = _glorot(rng, (self.in_channels, self.out_channels, k), self.in_channels * k, self.out_channels * k, dtype)
        self.params["b"] = np.zeros(self.out_channels, dtype=dtype)

    def forward(self, x, train=False):
        out, self._cache = F.transposed_conv1d_tm_forward(x, self.params["w"], self.params["b"], self.stride, self.padding)
        return out

    def backward(self, grad):
        dx, self.grads["w"], self.grads["b"] = F.transposed_conv1d_tm_backward(grad, self._cache, self.params["w"])
        self._cache = None
        return dx


class MaxPool1d(Layer):
    kind = "maxpool1d"

    def __init__(self, pool: int = 2, stride: int | None = None):
        super().__init__()
        self.pool = pool
        self.stride = pool if stride is None else stride

    def hyper(self):
        return {"pool": self.pool, "stride": self.stride}

    def output_shape(self, shape):
        c, length = shape
        if length < self.pool:
            raise ShapeError("maxpool input shorter than pool")
        return (c, (length - self.pool) // self.stride + 1)

    def forward(self, x, train=False):
        self._len = x.shape[1]
        out, self._idx = F.maxpool1d_tm_forward(x, self.pool, self.stride)
        return out

    def backward(self, grad):
        return F.maxpool1d_tm_backward(grad, self._idx, self._len)


class Upsample1d(Layer):
    kind = "upsample1d"

    def __init__(self, factor: int = 2):
        super().__init__()
        self.factor = factor

    def hyper(self):
        return {"factor": self.factor}

    def output_shape(self, shape):
        c, length = shape
        return (c, length * self.factor)

    def forward(self, x, train=False):
        return F.upsample1d_tm_forward(x, self.factor)

    def backward(self, grad):
        return F.upsample1d_tm_backward(grad, self.factor)


class Dense(Layer):
    kind = "dense"
    param_names = ("w", "b")

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features

    def hyper(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"dense expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def init_params(self, rng, dtype):
        self.params["w"] = _glorot(rng, (self.out_features, self.in_features), self.in_features, self.out_features, dtype)
        self.params["b"] = np.zeros(self.out_features, dtype=dtype)

    def forward(self, x, train=False):
        self._x = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, grad):
        self.grads["w"] = grad.T @ self._x
        self.grads["b"] = grad.sum(axis=0)
        self._x = None
        return grad @ self.params["w"]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask


class Dropout(Layer):
    kind = "dropout"
    stochastic = True

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def hyper(self):
        return {"rate": self.rate}

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = F.dropout_mask(x.shape, self.rate, self.rng, x.dtype)
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def hyper(self):
        return {"shape": list(self.shape)}

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {shape} to {self.shape}")
        return self.shape

    def forward(self, x, train=False):
        self._shape = x.shape
        # a (C, L) target is laid out time-major like every other sequence
        shape = self.shape[::-1] if len(self.shape) == 2 else self.shape
        return x.reshape((x.shape[0],) + shape)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reparameterize(Layer):
    """Splits its input into (mu, logvar) halves and emits a latent sample.

    Training draws ``z = mu + exp(logvar / 2) * eps``; evaluation returns
    ``mu``.  The layer also carries ``beta * KL(q || N(0, I))`` (batch mean)
    as ``aux_loss`` and adds its gradient during backward.
    """

    kind = "reparameterize"
    stochastic = True

    def __init__(self, latent_dim: int, beta: float = 0.0):
        super().__init__()
        self.latent_dim = latent_dim
        self.beta = float(beta)
        self.fixed_eps: np.ndarray | None = None

    def hyper(self):
        return {"latent_dim": self.latent_dim, "beta": self.beta}

    def output_shape(self, shape):
        if shape != (2 * self.latent_dim,):
            raise ShapeError(f"reparameterize expects ({2 * self.latent_dim},), got {shape}")
        return (self.latent_dim,)

    def forward(self, x, train=False):
        d = self.latent_dim
        mu, logvar = x[:, :d], x[:, d:]
        self._mu, self._logvar = mu, logvar
        kl, _ = F.kl_std_normal(mu, logvar)
        self.kl = kl
        self.aux_loss = self.beta * kl
        if not train:
            self._eps = None
            return mu.copy()
        eps = self.fixed_eps if self.fixed_eps is not None else None
        z, self._eps = F.reparameterize(mu, logvar, self.rng, eps)
        return z

    def backward(self, grad):
        mu, logvar = self._mu, self._logvar
        _, (dmu_kl, dlv_kl) = F.kl_std_normal(mu, logvar)
        dmu = grad + self.beta * dmu_kl
        dlv = self.beta * dlv_kl
        if self._eps is not None:
            dlv = dlv + grad * self._eps * 0.5 * np.exp(0.5 * logvar)
        return np.concatenate([dmu, dlv], axis=1).astype(grad.dtype, copy=False)


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv1d, TransposedConv1d, MaxPool1d, Upsample1d, Dense, ReLU, Dropout, Flatten, Reshape, Reparameterize)
}


def layer_from_spec(kind: str, hyper: dict) -> Layer:
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    if kind == "reshape":
        return cls(tuple(hyper["shape"]))
    return cls(**hyper)
