"""Context-conditioned bottleneck model over (current, goal) observation pairs.

The encoder maps (o_t, o_g) to a Gaussian over a latent goal z; the decoder
maps (o_t, z) to a Gaussian over (v, w, d), i.e. the action toward the goal
and the number of timesteps to reach it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nncore
from .datagen import Dataset
from .errors import ContractError, TrainingDiverged
from .nncore import AdamState, DenseNet, DiagGaussian
from .simworld import Action

LATENT_DIM = 16
HIDDEN = 64
OUT_DIM = 3  # (v, w, d)
LOG_STD_NORMAL_PEAK = -0.5 * math.log(2.0 * math.pi)


@dataclass
class ModelParams:
    encoder: DenseNet
    decoder: DenseNet
    beta: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.beta < 0:
            raise ContractError("beta must be non-negative")
        if self.decoder.out_dim != 2 * OUT_DIM:
            raise ContractError("decoder must emit mean and log-sigma for (v, w, d)")
        if self.encoder.out_dim % 2:
            raise ContractError("encoder must emit mean and log-sigma halves")
        if self.decoder.in_dim != self.n_rays + self.latent_dim:
            raise ContractError("decoder input must be observation + latent")

    @property
    def latent_dim(self) -> int:
        return self.encoder.out_dim // 2

    @property
    def n_rays(self) -> int:
        return self.encoder.in_dim // 2

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def copy(self) -> "ModelParams":
        return ModelParams(self.encoder.copy(), self.decoder.copy(), self.beta, dict(self.meta))

    def save(self, path, **extra_meta) -> None:
        meta = dict(self.meta, n_rays=self.n_rays, latent_dim=self.latent_dim, beta=self.beta, **extra_meta)
        nncore.save_checkpoint(path, {"encoder": self.encoder, "decoder": self.decoder}, meta)

    @classmethod
    def load(cls, path) -> "ModelParams":
        nets, meta = nncore.load_checkpoint(path)
        return cls(nets["encoder"], nets["decoder"], float(meta.get("beta", 1.0)), meta)


def init_params(n_rays: int, latent_dim: int = LATENT_DIM, hidden: int = HIDDEN, beta: float = 1.0,
                seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    enc = DenseNet.init([2 * n_rays, hidden, hidden, 2 * latent_dim], rng)
    dec = DenseNet.init([n_rays + latent_dim, hidden, hidden, 2 * OUT_DIM], rng)
    return ModelParams(enc, dec, beta, {"init_seed": seed, "hidden": hidden})


@dataclass
class LatentGoal:
    z: np.ndarray
    origin: str  # "posterior-mean" | "posterior-sample" | "prior-sample"


@dataclass
class Prediction:
    action: np.ndarray  # mean (v, w), unclamped
    distance: np.ndarray | float  # mean timesteps, clamped >= 0
    dist: DiagGaussian  # full Gaussian over (v, w, d)

    def mean_action(self) -> Action:
        return Action(*np.asarray(self.action).reshape(2))


def _split(out: np.ndarray) -> DiagGaussian:
    h = out.shape[-1] // 2
    return DiagGaussian(out[..., :h], out[..., h:])


def encode(params: ModelParams, o_t, o_g) -> DiagGaussian:
    o_t = np.asarray(o_t, dtype=np.float64)
    o_g = np.asarray(o_g, dtype=np.float64)
    if o_t.shape[-1] != params.n_rays or o_g.shape[-1] != params.n_rays:
        raise ContractError(f"observations must have {params.n_rays} rays")
    o_t, o_g = np.broadcast_arrays(o_t, o_g)
    return _split(nncore.forward(params.encoder, np.concatenate([o_t, o_g], axis=-1)))


def encode_mean(params: ModelParams, o_t, o_g) -> LatentGoal:
    return LatentGoal(encode(params, o_t, o_g).mu, "posterior-mean")


def decode(params: ModelParams, o_t, z) -> Prediction:
    o_t = np.asarray(o_t, dtype=np.float64)
    z = np.asarray(z.z if isinstance(z, LatentGoal) else z, dtype=np.float64)
    if z.shape[-1] != params.latent_dim:
        raise ContractError(f"latent must have {params.latent_dim} dims")
    if o_t.ndim < z.ndim:
        o_t = np.broadcast_to(o_t, z.shape[:-1] + o_t.shape[-1:])
    elif z.ndim < o_t.ndim:
        z = np.broadcast_to(z, o_t.shape[:-1] + z.shape[-1:])
    dist = _split(nncore.forward(params.decoder, np.concatenate([o_t, z], axis=-1)))
    return Prediction(dist.mu[..., :2], np.maximum(dist.mu[..., 2], 0.0), dist)


def predicted_distance(params: ModelParams, o_t, o_g):
    """Distance component of the decoder mean at the encoder mean, clamped >= 0."""
    zbar = encode(params, o_t, o_g).mu
    d = decode(params, o_t, zbar).distance
    return float(d) if np.ndim(d) == 0 else d


def prior_log_density_per_dim(z) -> np.ndarray | float:
    """Mean over dimensions of log N(z_i; 0, 1)."""
    z = np.asarray(z, dtype=np.float64)
    return LOG_STD_NORMAL_PEAK - 0.5 * np.mean(z * z, axis=-1)


def feasibility_score(params: ModelParams, o_t, o_g):
    """Per-dimension geometric-mean prior density of the encoder mean."""
    return np.exp(prior_log_density_per_dim(encode(params, o_t, o_g).mu))


def feasibility(params: ModelParams, o_t, o_g, eps: float = 1e-2) -> bool:
    if not 0.0 < eps < 1.0:
        raise ContractError("eps must lie in (0, 1)")
    return bool(feasibility_score(params, o_t, o_g) > eps)


def sample_prior(latent_dim: int, rng: np.random.Generator) -> LatentGoal:
    return LatentGoal(rng.standard_normal(latent_dim), "prior-sample")


# -- training objective ---------------------------------------------------------------


def vib_loss_and_grad(params: ModelParams, batch, noise, beta: float | None = None,
                      need_grad: bool = True):
    """Mean over the batch of NLL(a, d | z, o_t) + beta * KL(p(z | o_t, o_g) || N(0, I)).

    ``batch`` is (O_t, O_g, A, D); ``noise`` are the standard-normal draws for
    the reparameterized z. Returns (loss, grads, parts) where grads follow
    ``params.params()`` order and parts holds the mean NLL and KL.
    """
    O, G, A, Dd = batch
    O = np.atleast_2d(O)
    G = np.atleast_2d(G)
    B = len(O)
    if B == 0:
        raise ContractError("empty batch")
    beta = params.beta if beta is None else beta
    noise = np.asarray(noise, dtype=np.float64).reshape(B, params.latent_dim)
    K, Dz = params.n_rays, params.latent_dim

    e, tr_e = nncore.forward_trace(params.encoder, np.concatenate([O, G], axis=1))
    mu_p, ls_p = e[:, :Dz], e[:, Dz:]
    sig_p = np.exp(ls_p)
    z = mu_p + sig_p * noise
    q, tr_d = nncore.forward_trace(params.decoder, np.concatenate([O, z], axis=1))
    mu_q, ls_q = q[:, :OUT_DIM], q[:, OUT_DIM:]
    y = np.concatenate([np.asarray(A, dtype=np.float64).reshape(B, 2),
                        np.asarray(Dd, dtype=np.float64).reshape(B, 1)], axis=1)
    inv = np.exp(-ls_q)
    r = (y - mu_q) * inv
    nll = np.sum(-LOG_STD_NORMAL_PEAK + ls_q + 0.5 * r * r, axis=1)
    kl = 0.5 * np.sum(mu_p * mu_p + sig_p * sig_p - 1.0 - 2.0 * ls_p, axis=1)
    loss = float(np.mean(nll + beta * kl))
    parts = {"nll": float(nll.mean()), "kl": float(kl.mean())}
    if not need_grad:
        return loss, None, parts

    g_q = np.concatenate([-r * inv, 1.0 - r * r], axis=1) / B
    g_dec, g_in = nncore.backward(tr_d, g_q)
    g_z = g_in[:, K:]
    g_mu = g_z + beta * mu_p / B
    g_ls = g_z * noise * sig_p + beta * (sig_p * sig_p - 1.0) / B
    g_enc, _ = nncore.backward(tr_e, np.concatenate([g_mu, g_ls], axis=1))
    return loss, g_enc + g_dec, parts


def vib_loss(params: ModelParams, batch, noise, beta: float | None = None) -> float:
    return vib_loss_and_grad(params, batch, noise, beta, need_grad=False)[0]


def train(params: ModelParams, dataset: Dataset, epochs: int, batch_size: int = 128, lr: float = 1e-4,
          seed: int = 0, opt: AdamState | None = None, copy: bool = True):
    """Adam on the bottleneck loss with seeded shuffling and noise.

    Returns (params, per-epoch mean loss trace). The input params are left
    untouched unless ``copy=False``. Passing ``opt`` continues an existing
    optimizer state (its learning rate wins).
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if dataset.n_rays != params.n_rays:
        raise ContractError("dataset and model disagree on ray count")
    p = params.copy() if copy else params
    rng = np.random.default_rng(seed)
    opt = opt if opt is not None else AdamState(lr=lr)
    flat = p.params()
    n = len(dataset)
    bs = max(1, min(batch_size, n))
    trace = []
    n_steps = 0
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            noise = rng.standard_normal((len(idx), p.latent_dim))
            loss, grads, _ = vib_loss_and_grad(p, dataset.batch(idx), noise)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch offset {s}")
            nncore.adam_step(opt, flat, grads)
            n_steps += 1
            total += loss * len(idx)
        trace.append(total / n)
    p.meta["train_steps"] = p.meta.get("train_steps", 0) + n_steps
    return p, trace
