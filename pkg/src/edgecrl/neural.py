"""A small dense-network engine: forward/backward passes, softmax helpers, Adam.

Everything runs in float64 on numpy. Inputs may be a single vector or a batch
(rows are samples). ``backward`` returns gradients aligned with ``params()``
plus the gradient with respect to the input, so networks compose.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, StaleCacheError, TrainingDivergenceError

CHECKPOINT_FORMAT = "dense-net"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "identity")


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name, z, y, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - y * y)
    return g


@dataclass
class Layer:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray     # (out,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ParameterError("layer weights must be (in, out) with a matching bias")


@dataclass
class _Cache:
    owner: int
    version: int
    squeeze: bool
    inputs: list
    pre: list
    post: list


class DenseNet:
    """A chain of fully connected layers."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ParameterError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.weights.shape[1] != b.weights.shape[0]:
                raise ParameterError("adjacent layer dimensions do not chain")
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, hidden: str = "relu",
             output: str = "identity", output_scale: float = 1.0) -> "DenseNet":
        """Uniform fan-in initialisation, zero biases."""
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            last = k == len(sizes) - 2
            bound = 1.0 / np.sqrt(n_in) * (output_scale if last else 1.0)
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            layers.append(Layer(w, np.zeros(n_out), output if last else hidden))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[1] != self.in_dim:
            raise ParameterError(f"input dimension {h.shape[1]} != network input {self.in_dim}")
        inputs, pre, post = [], [], []
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weights + layer.bias
            h = _activate(layer.activation, z)
            pre.append(z)
            post.append(h)
        cache = _Cache(id(self), self.version, squeeze, inputs, pre, post)
        return (h[0] if squeeze else h), cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache: _Cache, grad_out):
        if cache.owner != id(self) or cache.version != self.version:
            raise StaleCacheError("forward cache does not match the current parameters")
        g = np.asarray(grad_out, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        grads = []
        for layer, x, z, y in zip(reversed(self.layers), reversed(cache.inputs),
                                  reversed(cache.pre), reversed(cache.post)):
            g = _activation_grad(layer.activation, z, y, g)
            grads.append(g.sum(axis=0))
            grads.append(x.T @ g)
            g = g @ layer.weights.T
        grads.reverse()
        return grads, (g[0] if cache.squeeze else g)

    def to_dict(self) -> dict:
        return {"type": "dense", "layers": [
            {"weights": l.weights.tolist(), "bias": l.bias.tolist(), "activation": l.activation}
            for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        return cls([Layer(np.array(l["weights"], dtype=np.float64).reshape(len(l["weights"]), -1),
                          np.array(l["bias"], dtype=np.float64), l["activation"])
                    for l in d["layers"]])


class BranchedNet:
    """Per-group branch layers whose outputs are concatenated and fed to a trunk."""

    def __init__(self, branches: Sequence[DenseNet], trunk: DenseNet):
        self.branches = list(branches)
        self.trunk = trunk
        if sum(b.out_dim for b in self.branches) != trunk.in_dim:
            raise ParameterError("branch outputs do not match the trunk input")
        self.splits = np.cumsum([b.in_dim for b in self.branches])[:-1]
        self.out_splits = np.cumsum([b.out_dim for b in self.branches])[:-1]

    @classmethod
    def init(cls, group_sizes: Sequence[int], out_dim: int, rng: np.random.Generator,
             branch_width: int = 32, hidden: Sequence[int] = (128, 128),
             output_scale: float = 1.0) -> "BranchedNet":
        branches = [DenseNet.init([n, branch_width], rng, output="relu") for n in group_sizes]
        trunk = DenseNet.init([branch_width * len(group_sizes), *hidden, out_dim], rng,
                              output_scale=output_scale)
        return cls(branches, trunk)

    @property
    def version(self) -> int:
        return self.trunk.version

    @version.setter
    def version(self, v: int):
        self.trunk.version = v
        for b in self.branches:
            b.version = v

    @property
    def in_dim(self) -> int:
        return sum(b.in_dim for b in self.branches)

    @property
    def out_dim(self) -> int:
        return self.trunk.out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for b in self.branches:
            out += b.params()
        return out + self.trunk.params()

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ParameterError(f"input dimension {x.shape[-1]} != network input {self.in_dim}")
        parts = np.split(x, self.splits, axis=-1)
        outs, caches = [], []
        for b, p in zip(self.branches, parts):
            o, c = b.forward(p)
            outs.append(o)
            caches.append(c)
        y, tc = self.trunk.forward(np.concatenate(outs, axis=-1))
        return y, (caches, tc)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        caches, tc = cache
        tgrads, g = self.trunk.backward(tc, grad_out)
        grads, gin = [], []
        for b, c, gp in zip(self.branches, caches, np.split(g, self.out_splits, axis=-1)):
            bg, gi = b.backward(c, gp)
            grads += bg
            gin.append(gi)
        return grads + tgrads, np.concatenate(gin, axis=-1)

    def to_dict(self) -> dict:
        return {"type": "branched", "branches": [b.to_dict() for b in self.branches],
                "trunk": self.trunk.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "BranchedNet":
        return cls([DenseNet.from_dict(b) for b in d["branches"]], DenseNet.from_dict(d["trunk"]))


def net_from_dict(d: dict):
    return BranchedNet.from_dict(d) if d.get("type") == "branched" else DenseNet.from_dict(d)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if np.isnan(z).any():
        raise TrainingDivergenceError("NaN in logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if np.isnan(z).any():
        raise TrainingDivergenceError("NaN in logits")
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_categorical(probs, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def log_prob(probs, index: int) -> float:
    return float(np.log(probs[index]))


class Adam:
    """Adaptive-moment optimizer over a network's parameter arrays (updated in place)."""

    def __init__(self, net, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, grads: Sequence[np.ndarray]):
        params = self.net.params()
        if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
            raise ParameterError("gradient shapes do not match parameter shapes")
        b1, b2 = self.betas
        self.t += 1
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.net.version += 1

    def to_dict(self) -> dict:
        return {"lr": self.lr, "betas": list(self.betas), "eps": self.eps, "t": self.t,
                "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    def load_dict(self, d: dict):
        self.lr, self.betas, self.eps, self.t = d["lr"], tuple(d["betas"]), d["eps"], d["t"]
        self.m = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(d["m"], self.net.params())]
        self.v = [np.array(a, dtype=np.float64).reshape(p.shape) for a, p in zip(d["v"], self.net.params())]


def optimize_step(state: Adam, grads: Sequence[np.ndarray]):
    state.step(grads)
    return state.net.params()
