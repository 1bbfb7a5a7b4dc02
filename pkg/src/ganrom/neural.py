"""Small reverse-mode differentiable layers in 64-bit numpy.

Only what the generator/discriminator need: dense, 2-D convolution, pointwise
activations and reshapes, chained by :class:`Network`. Arrays are batch-first.
A forward pass records its inputs; :meth:`Network.backward` consumes that
record and returns the gradients with respect to every weight and to the
network input.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .npzio import save_npz

CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class BackwardStateError(RuntimeError):
    """``backward`` called without a matching ``forward``."""


@dataclass
class LayerSpec:
    """Declarative description of one layer.

    ``kind`` is one of ``dense``, ``conv2d``, ``activation``, ``reshape``;
    ``options`` holds the kind-specific hyperparameters, e.g.
    ``{"fan_in": 100, "fan_out": 64}`` or ``{"name": "tanh"}``.
    """

    kind: str
    options: dict[str, Any] = field(default_factory=dict)


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> tuple[dict[str, np.ndarray], np.ndarray]:
        raise NotImplementedError

    def spec(self) -> LayerSpec:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise BackwardStateError(f"{self.kind}: backward without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache


class Dense(Layer):
    kind = "dense"

    def __init__(self, fan_in: int, fan_out: int, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        bound = 1.0 / np.sqrt(fan_in)
        self.W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.b = np.zeros(fan_out)

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.W.shape[0]:
            raise ShapeError(f"dense expects (batch, {self.W.shape[0]}), got {x.shape}")
        self._cache = x
        return x @ self.W + self.b

    def backward(self, grad):
        x = self._take_cache()
        return {"W": x.T @ grad, "b": grad.sum(axis=0)}, grad @ self.W.T

    def spec(self):
        return LayerSpec("dense", {"fan_in": self.W.shape[0], "fan_out": self.W.shape[1]})


class Conv2d(Layer):
    """Cross-correlation with zero padding ``kernel // 2``, input ``(B, C, H, W)``."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, stride: int = 1, rng=None):
        super().__init__()
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel * kernel
        bound = 1.0 / np.sqrt(fan_in)
        self.W = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel))
        self.b = np.zeros(out_channels)
        self.stride = stride
        self.pad = kernel // 2

    @property
    def params(self):
        return {"W": self.W, "b": self.b}

    def _out_hw(self, h, w):
        k, s, p = self.W.shape[2], self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        out_c, in_c, k, _ = self.W.shape
        if x.ndim != 4 or x.shape[1] != in_c:
            raise ShapeError(f"conv2d expects (batch, {in_c}, H, W), got {x.shape}")
        B, _, H, W = x.shape
        ho, wo = self._out_hw(H, W)
        p, s = self.pad, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B, ho, wo, in_c * k * k)
        out = cols @ self.W.reshape(out_c, -1).T + self.b
        self._cache = (cols, x.shape)
        return out.transpose(0, 3, 1, 2)

    def backward(self, grad):
        cols, in_shape = self._take_cache()
        out_c, in_c, k, _ = self.W.shape
        B, _, H, W = in_shape
        ho, wo = grad.shape[2], grad.shape[3]
        p, s = self.pad, self.stride
        g = grad.transpose(0, 2, 3, 1)  # (B, ho, wo, out_c)
        gW = (g.reshape(-1, out_c).T @ cols.reshape(-1, in_c * k * k)).reshape(self.W.shape)
        gb = g.sum(axis=(0, 1, 2))
        dcols = (g @ self.W.reshape(out_c, -1)).reshape(B, ho, wo, in_c, k, k)
        dxp = np.zeros((B, in_c, H + 2 * p, W + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return {"W": gW, "b": gb}, dxp[:, :, p : p + H, p : p + W]

    def spec(self):
        out_c, in_c, k, _ = self.W.shape
        return LayerSpec("conv2d", {"in_channels": in_c, "out_channels": out_c,
                                    "kernel": k, "stride": self.stride})


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Activation(Layer):
    kind = "activation"
    names = ("tanh", "relu", "leaky_relu", "sigmoid", "identity")

    def __init__(self, name: str, slope: float = 0.2):
        super().__init__()
        if name not in self.names:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name
        self.slope = slope

    def forward(self, x):
        if self.name == "tanh":
            y = np.tanh(x)
        elif self.name == "sigmoid":
            y = _sigmoid(x)
        elif self.name == "relu":
            y = np.maximum(x, 0.0)
        elif self.name == "leaky_relu":
            y = np.where(x > 0, x, self.slope * x)
        else:
            y = x
        self._cache = (x, y)
        return y

    def backward(self, grad):
        x, y = self._take_cache()
        if self.name == "tanh":
            d = 1.0 - y * y
        elif self.name == "sigmoid":
            d = y * (1.0 - y)
        elif self.name == "relu":
            d = (x > 0).astype(x.dtype)
        elif self.name == "leaky_relu":
            d = np.where(x > 0, 1.0, self.slope)
        else:
            return {}, grad
        return {}, grad * d

    def spec(self):
        opts = {"name": self.name}
        if self.name == "leaky_relu":
            opts["slope"] = self.slope
        return LayerSpec("activation", opts)


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(n) for n in shape)

    def forward(self, x):
        try:
            y = x.reshape(x.shape[0], *self.shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {x.shape[1:]} to {self.shape}") from exc
        self._cache = x.shape
        return y

    def backward(self, grad):
        return {}, grad.reshape(self._take_cache())

    def spec(self):
        return LayerSpec("reshape", {"shape": list(self.shape)})


def build_layer(spec: LayerSpec, rng=None) -> Layer:
    o = spec.options
    if spec.kind == "dense":
        return Dense(o["fan_in"], o["fan_out"], rng)
    if spec.kind == "conv2d":
        return Conv2d(o["in_channels"], o["out_channels"], o.get("kernel", 3), o.get("stride", 1), rng)
    if spec.kind == "activation":
        return Activation(o["name"], o.get("slope", 0.2))
    if spec.kind == "reshape":
        return Reshape(o["shape"])
    raise ValueError(f"unknown layer kind {spec.kind!r}")


class Network:
    """Ordered chain of layers with a recorded forward pass."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    @classmethod
    def from_specs(cls, specs: list[LayerSpec], seed=None) -> Network:
        rng = np.random.default_rng(seed)
        return cls([build_layer(s, rng) for s in specs])

    def specs(self) -> list[LayerSpec]:
        return [layer.spec() for layer in self.layers]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        return x

    __call__ = forward

    def backward(self, grad: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns ``(weight_grads, input_grad)``; weight grads follow :meth:`parameters` order."""
        grads: list[list[np.ndarray]] = []
        for layer in reversed(self.layers):
            g_params, grad = layer.backward(grad)
            grads.append([g_params[k] for k in layer.params])
        flat = [g for layer_grads in reversed(grads) for g in layer_grads]
        return flat, grad

    def input_gradient(self, grad: np.ndarray) -> np.ndarray:
        return self.backward(grad)[1]

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params.values()]

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers)
                for name, p in layer.params.items()]

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Arrays for a checkpoint, keyed ``<prefix>layer<i>.<name>``; shapes travel with the arrays."""
        out = {f"{prefix}layer{name.split('.')[0]}.{name.split('.')[1]}": p.copy()
               for name, p in self.named_parameters()}
        out[f"{prefix}specs"] = np.array(json.dumps([asdict(s) for s in self.specs()]))
        out[f"{prefix}version"] = np.array(CHECKPOINT_VERSION)
        return out

    @classmethod
    def from_state(cls, arrays, prefix: str = "") -> Network:
        version = int(arrays[f"{prefix}version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        specs = [LayerSpec(**d) for d in json.loads(str(arrays[f"{prefix}specs"]))]
        net = cls.from_specs(specs, seed=0)
        for name, p in net.named_parameters():
            i, pname = name.split(".")
            stored = arrays[f"{prefix}layer{i}.{pname}"]
            if stored.shape != p.shape:
                raise ShapeError(f"checkpoint layer {i}.{pname}: shape {stored.shape} != {p.shape}")
            p[...] = stored
        return net

    def save(self, path) -> None:
        save_npz(path, **self.state())

    @classmethod
    def load(cls, path) -> Network:
        with np.load(path) as data:
            return cls.from_state(data)

    def copy(self) -> Network:
        return Network.from_state(self.state())


class Adam:
    """Adam with per-coordinate step sizes; updates the given arrays in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 2e-4, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
