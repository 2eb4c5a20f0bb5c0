"""Dense tanh networks with hand-written reverse mode, diagonal Gaussians, and Adam.

Only what the latent goal model needs. Everything works on a single vector or
a (batch, features) matrix.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DenseNet:
    """Affine layers with tanh between them; the last layer is linear."""

    def __init__(self, weights, biases):
        if len(weights) != len(biases) or not weights:
            raise ContractError("need one bias per weight matrix")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ContractError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ContractError(f"layer {i} input {w.shape[1]} != previous output "
                                    f"{self.weights[i - 1].shape[0]}")

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, zero_last: bool = True) -> "DenseNet":
        """Glorot-uniform hidden layers; the output layer starts at zero by default."""
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            if last and zero_last:
                w = np.zeros((n_out, n_in))
            else:
                lim = math.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-lim, lim, size=(n_out, n_in))
            weights.append(w)
            biases.append(np.zeros(n_out))
        return cls(weights, biases)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ContractError(f"input has {x.shape[-1]} features, net expects {self.in_dim}")
        return x

    def __call__(self, x):
        return forward(self, x)


@dataclass
class Trace:
    """Activations recorded by :func:`forward_trace` for one backward pass."""
    net: DenseNet
    inputs: list  # input to each layer
    outputs: list  # post-activation output of each hidden layer


def forward(net: DenseNet, x) -> np.ndarray:
    h = net._check(x)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h


def forward_trace(net: DenseNet, x) -> tuple[np.ndarray, Trace]:
    h = net._check(x)
    inputs, outputs = [], []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
            outputs.append(h)
    return h, Trace(net, inputs, outputs)


def backward(trace: Trace | None, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients w.r.t. ``net.params()`` (same order) and w.r.t. the input."""
    if trace is None:
        raise ContractError("backward called without a recorded forward pass")
    net = trace.net
    g = np.asarray(grad_out, dtype=np.float64)
    grads: list[np.ndarray] = [None] * (2 * len(net.weights))  # type: ignore[list-item]
    for i in range(len(net.weights) - 1, -1, -1):
        if i < len(net.weights) - 1:
            g = g * (1.0 - trace.outputs[i] ** 2)
        x = trace.inputs[i]
        if g.ndim == 1:
            grads[2 * i] = np.outer(g, x)
            grads[2 * i + 1] = g.copy()
        else:
            grads[2 * i] = g.T @ x
            grads[2 * i + 1] = g.sum(axis=0)
        g = g @ net.weights[i]
    return grads, g


# -- diagonal Gaussians -----------------------------------------------------------


@dataclass
class DiagGaussian:
    """Diagonal Gaussian stored as mean and log standard deviation (last axis = D)."""
    mu: np.ndarray
    log_sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_sigma = np.asarray(self.log_sigma, dtype=np.float64)
        if self.mu.shape != self.log_sigma.shape:
            raise ContractError(f"mu {self.mu.shape} and log_sigma {self.log_sigma.shape} differ")

    @classmethod
    def from_sigma(cls, mu, sigma) -> "DiagGaussian":
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(~(sigma > 0)):
            raise ContractError("sigma must be strictly positive")
        return cls(mu, np.log(sigma))

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


def gaussian_log_prob(dist: DiagGaussian, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dist.dim:
        raise ContractError("dimension mismatch")
    z = (x - dist.mu) * np.exp(-dist.log_sigma)
    return np.sum(-HALF_LOG_2PI - dist.log_sigma - 0.5 * z * z, axis=-1)


def kl_to_standard_normal(dist: DiagGaussian) -> np.ndarray | float:
    """KL(dist || N(0, I)), summed over the last axis."""
    s2 = np.exp(2.0 * dist.log_sigma)
    return 0.5 * np.sum(dist.mu ** 2 + s2 - 1.0 - 2.0 * dist.log_sigma, axis=-1)


def reparameterize(dist: DiagGaussian, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != dist.dim:
        raise ContractError("noise dimension mismatch")
    return dist.mu + dist.sigma * noise


# -- Adam -----------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """Bias-corrected Adam update, applied to ``params`` in place (also returned)."""
    if len(params) != len(grads):
        raise ContractError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or m.shape != p.shape:
            raise ContractError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- checkpoints ---------------------------------------------------------------


def nets_to_dict(nets: dict[str, DenseNet], meta: dict | None = None) -> dict:
    layers = {}
    for name, net in nets.items():
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            layers[f"{name}.{i}"] = {
                "shape": list(w.shape),
                "weight": w.ravel().tolist(),
                "bias": b.tolist(),
            }
    return {"meta": dict(meta or {}), "layers": layers}


def nets_from_dict(d: dict) -> tuple[dict[str, DenseNet], dict]:
    grouped: dict[str, list] = {}
    for key, rec in d["layers"].items():
        name, idx = key.rsplit(".", 1)
        w = np.array(rec["weight"], dtype=np.float64).reshape(rec["shape"])
        grouped.setdefault(name, []).append((int(idx), w, np.array(rec["bias"], dtype=np.float64)))
    nets = {}
    for name, items in grouped.items():
        items.sort(key=lambda t: t[0])
        nets[name] = DenseNet([w for _, w, _ in items], [b for _, _, b in items])
    return nets, d.get("meta", {})


def save_checkpoint(path, nets: dict[str, DenseNet], meta: dict | None = None) -> None:
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(nets_to_dict(nets, meta)))


def load_checkpoint(path) -> tuple[dict[str, DenseNet], dict]:
    return nets_from_dict(json.loads(Path(path).read_text()))
