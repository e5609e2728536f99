"""Variational graph autoencoder: GIN encoder with sum readout into a
Gaussian posterior, MLP decoder emitting two logits per node pair."""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from .graphs import Graph, node_ordering, spectral_features, to_padded_adjacency
from .nn import Adam, Dense, DivergenceError, gumbel_softmax_st, mlp

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7
LOG_VAR_BOUND = 10.0


@dataclass
class VAEConfig:
    n_max: int = 100
    feature_dim: int = 10
    gin_layers: int = 2
    hidden: int = 64
    latent: int = 32
    decoder_layers: int = 3
    decoder_hidden: int = 256
    beta: float = 0.05
    ordering: str = "bfs_degree"
    cond_dim: int = 0  # > 0 turns the decoder into the conditional baseline

    @property
    def n_pairs(self) -> int:
        return self.n_max * (self.n_max - 1) // 2


def gin_aggregate(h: torch.Tensor, adj: torch.Tensor, eps: torch.Tensor | float) -> torch.Tensor:
    """``(1 + eps) * h_v + sum of neighbour rows``; works batched or per graph."""
    return (1.0 + eps) * h + adj @ h


def gin_layer(features: torch.Tensor, adjacency: torch.Tensor, eps, update: Callable[[torch.Tensor], torch.Tensor]):
    return update(gin_aggregate(features, adjacency, eps))


class GINLayer(nn.Module):
    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.eps = nn.Parameter(torch.zeros(()))
        self.mlp = nn.Sequential(Dense(in_dim, out_dim, "relu"), Dense(out_dim, out_dim, "relu"))

    def forward(self, h: torch.Tensor, adj: torch.Tensor) -> torch.Tensor:
        return gin_layer(h, adj, self.eps, self.mlp)


class Encoder(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        dims = [cfg.feature_dim] + [cfg.hidden] * cfg.gin_layers
        self.layers = nn.ModuleList(GINLayer(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.mu = Dense(cfg.hidden, cfg.latent, "none")
        self.log_var = Dense(cfg.hidden, cfg.latent, "none")

    def readout(self, x: torch.Tensor, adj: torch.Tensor, node_mask: torch.Tensor | None = None) -> torch.Tensor:
        h = x
        for layer in self.layers:
            h = layer(h, adj)
            if node_mask is not None:
                # padding rows would otherwise carry MLP(0) into the sum
                h = h * node_mask.unsqueeze(-1)
        return h.sum(dim=-2)

    def forward(self, x, adj, node_mask=None) -> tuple[torch.Tensor, torch.Tensor]:
        hg = self.readout(x, adj, node_mask)
        # smooth bound: sum readouts of dense graphs are large and exp() overflows
        log_var = LOG_VAR_BOUND * torch.tanh(self.log_var(hg) / LOG_VAR_BOUND)
        return self.mu(hg), log_var


class Decoder(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.n_pairs = cfg.n_pairs
        dims = [cfg.latent + cfg.cond_dim] + [cfg.decoder_hidden] * (cfg.decoder_layers - 1) + [2 * cfg.n_pairs]
        self.net = mlp(dims)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """Pair logits of shape ``[..., n_pairs, 2]``; class 1 means 'edge'."""
        return self.net(z).reshape(*z.shape[:-1], self.n_pairs, 2)


def edge_probabilities(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=-1)[..., 1]


def reparameterize(mu: torch.Tensor, log_var: torch.Tensor, generator: torch.Generator | None = None, noise=None):
    if noise is None:
        noise = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * noise


class GraphVAE(nn.Module):
    def __init__(self, cfg: VAEConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)

    def encode(self, x, adj, node_mask=None):
        return self.encoder(x, adj, node_mask)

    def decode_logits(self, z: torch.Tensor, cond: torch.Tensor | None = None) -> torch.Tensor:
        if self.cfg.cond_dim:
            if cond is None:
                raise ValueError("conditional decoder needs a condition vector")
            z = torch.cat([z, cond.to(z.dtype)], dim=-1)
        return self.decoder(z)

    def decode(self, z, cond=None) -> torch.Tensor:
        return edge_probabilities(self.decode_logits(z, cond))


def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over latent dims, per sample."""
    return -0.5 * (1.0 + log_var - mu.pow(2) - log_var.exp()).sum(dim=-1)


def bce(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy summed over pair slots, per sample."""
    p = probs.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    return -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)).sum(dim=-1)


def vae_loss_terms(probs, target, mu, log_var) -> tuple[torch.Tensor, torch.Tensor]:
    return bce(probs, target).mean(), kl_divergence(mu, log_var).mean()


def vae_loss(probs, target, mu, log_var, beta: float) -> torch.Tensor:
    rec, kl = vae_loss_terms(probs, target, mu, log_var)
    return rec + beta * kl


def triangle_to_matrix(tri: np.ndarray, n_max: int) -> np.ndarray:
    """Symmetric zero-diagonal matrix from a row-major upper triangle."""
    tri = np.asarray(tri)
    out = np.zeros(tri.shape[:-1] + (n_max, n_max), dtype=tri.dtype)
    iu, ju = np.triu_indices(n_max, k=1)
    out[..., iu, ju] = tri
    out[..., ju, iu] = tri
    return out


def discretize(logits: torch.Tensor, method: str = "gumbel", noise: torch.Tensor | None = None, generator=None):
    """Binary pair indicators from decoder logits: Gumbel hard sample or 0.5 threshold."""
    if method == "gumbel":
        hard, _ = gumbel_softmax_st(logits, 1.0, generator=generator, noise=noise)
        return hard[..., 1]
    if method == "threshold":
        return (edge_probabilities(logits) > 0.5).to(logits.dtype)
    raise ValueError(f"unknown discretization {method!r}")


# --- batching -------------------------------------------------------------


@dataclass
class GraphTensors:
    """Dense, padded training tensors for a list of graphs."""

    x: torch.Tensor  # [B, n_max, d]
    adj: torch.Tensor  # [B, n_max, n_max]
    mask: torch.Tensor  # [B, n_max]
    target: torch.Tensor  # [B, n_pairs]
    properties: torch.Tensor  # [B, 15], raw values

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "GraphTensors":
        return GraphTensors(self.x[idx], self.adj[idx], self.mask[idx], self.target[idx], self.properties[idx])


def graph_tensors(
    graphs: Sequence[Graph],
    properties: Sequence[Sequence[float]],
    n_max: int,
    ordering: str = "bfs_degree",
    feature_dim: int = 10,
) -> GraphTensors:
    b = len(graphs)
    x = np.zeros((b, n_max, feature_dim), dtype=np.float32)
    adj = np.zeros((b, n_max, n_max), dtype=np.float32)
    mask = np.zeros((b, n_max), dtype=np.float32)
    iu, ju = np.triu_indices(n_max, k=1)
    for i, g in enumerate(graphs):
        order = node_ordering(g, ordering)
        ordered = g.reorder(order)
        adj[i] = to_padded_adjacency(g, order, n_max)
        x[i, : g.n] = spectral_features(ordered, feature_dim)
        mask[i, : g.n] = 1.0
    target = adj[:, iu, ju]
    props = np.asarray(properties, dtype=np.float32).reshape(b, -1)
    return GraphTensors(*(torch.from_numpy(a) for a in (x, adj, mask, target, props)))


# --- training -------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0


@dataclass
class TrainHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self):
        return asdict(self)


def condition_input(props: torch.Tensor, stats, mask: torch.Tensor | None = None) -> torch.Tensor:
    """z-scored properties with masked entries replaced by the sentinel."""
    from .properties import MASK_SENTINEL

    mean = torch.as_tensor(stats.mean, dtype=props.dtype)
    std = torch.as_tensor(stats.std, dtype=props.dtype)
    out = (props - mean) / std
    if mask is not None:
        out = torch.where(mask.bool(), out, torch.full_like(out, MASK_SENTINEL))
    return out


def train_vae(
    model: GraphVAE,
    train: GraphTensors,
    train_cfg: TrainConfig,
    val: GraphTensors | None = None,
    stats=None,
    mask_fn: Callable[[int, np.random.Generator], np.ndarray] | None = None,
    on_epoch: Callable[[int, float, float | None], None] | None = None,
) -> TrainHistory:
    """Fit ``model`` in place; keeps the weights with the lowest validation loss.

    For the conditional baseline ``stats`` supplies the z-score statistics and
    ``mask_fn`` (optional) hides condition entries per sample.
    """
    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng([train_cfg.seed, 1])
    gen = torch.Generator().manual_seed(train_cfg.seed)
    opt = Adam(model.parameters(), lr=train_cfg.lr)
    beta = model.cfg.beta
    history = TrainHistory()
    best = (float("inf"), None)
    last_good = copy.deepcopy(model.state_dict())

    def cond_for(batch: GraphTensors, masked: bool):
        if not model.cfg.cond_dim:
            return None
        m = None
        if masked and mask_fn is not None:
            m = torch.from_numpy(mask_fn(len(batch), rng))
        return condition_input(batch.properties, stats, m)

    for epoch in range(train_cfg.epochs):
        model.train()
        perm = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(train), train_cfg.batch_size):
            batch = train.subset(perm[start : start + train_cfg.batch_size])
            mu, log_var = model.encode(batch.x, batch.adj, batch.mask)
            z = reparameterize(mu, log_var, gen)
            probs = model.decode(z, cond_for(batch, masked=True))
            loss = vae_loss(probs, batch.target, mu, log_var, beta)
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                raise DivergenceError(f"non-finite VAE loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        last_good = copy.deepcopy(model.state_dict())
        history.train.append(total / max(count, 1))
        val_loss = None
        if val is not None and len(val):
            val_loss = evaluate_vae_loss(model, val, cond_for(val, masked=False))
            history.val.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, copy.deepcopy(model.state_dict()))
                history.best_epoch = epoch + 1
        if on_epoch:
            on_epoch(epoch + 1, history.train[-1], val_loss)
        log.info("vae epoch %d train %.4f val %s", epoch + 1, history.train[-1], val_loss)
    if best[1] is not None:
        model.load_state_dict(best[1])
    return history


@torch.no_grad()
def evaluate_vae_loss(model: GraphVAE, data: GraphTensors, cond=None) -> float:
    model.eval()
    mu, log_var = model.encode(data.x, data.adj, data.mask)
    probs = model.decode(mu, cond)
    return float(vae_loss(probs, data.target, mu, log_var, model.cfg.beta))


@torch.no_grad()
def reconstruction_f1(model: GraphVAE, data: GraphTensors, cond=None) -> float:
    """Edge F1 of thresholded reconstructions from posterior means."""
    model.eval()
    mu, _ = model.encode(data.x, data.adj, data.mask)
    pred = model.decode(mu, cond) > 0.5
    truth = data.target > 0.5
    tp = float((pred & truth).sum())
    fp = float((pred & ~truth).sum())
    fn = float((~pred & truth).sum())
    return 2 * tp / max(2 * tp + fp + fn, 1.0)


@torch.no_grad()
def encode_means(model: GraphVAE, data: GraphTensors, batch_size: int = 1024) -> torch.Tensor:
    model.eval()
    out = []
    for start in range(0, len(data), batch_size):
        part = data.subset(slice(start, start + batch_size))
        mu, _ = model.encode(part.x, part.adj, part.mask)
        out.append(mu)
    return torch.cat(out) if out else torch.zeros(0, model.cfg.latent)


def vae_manifest(model: GraphVAE) -> dict:
    return {"kind": "vae", "config": asdict(model.cfg)}
