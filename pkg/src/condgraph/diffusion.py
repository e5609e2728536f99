"""Property-conditioned DDPM over graph latent codes."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from .nn import Adam, Dense, DivergenceError, mlp, time_embedding
from .properties import N_PROPERTIES

log = logging.getLogger(__name__)

MAX_MASKED = 8


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step tables indexed by ``t - 1`` for ``t = 1..T``."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(cls, beta) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        alpha = 1.0 - beta
        return cls(beta, alpha, np.cumprod(alpha))


def cosine_schedule(T: int, s: float = 0.008, max_beta: float = 0.999) -> NoiseSchedule:
    """Cosine schedule: alpha_bar(t) = f(t) / f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2).

    Betas are clipped at ``max_beta`` and alpha_bar is rebuilt from the
    clipped betas so the one-step and closed-form kernels agree.
    """
    if T < 2:
        raise ValueError("the schedule needs at least 2 steps")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1 + s)) * math.pi / 2) ** 2
    abar = f / f[0]
    beta = np.clip(1.0 - abar[1:] / abar[:-1], 0.0, max_beta)
    return NoiseSchedule.from_betas(beta)


def _gather(table: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    idx = torch.as_tensor(t).long() - 1
    vals = torch.as_tensor(table, dtype=like.dtype)[idx]
    return vals.reshape(vals.shape + (1,) * (like.ndim - vals.ndim))


def q_sample(z: torch.Tensor, t, noise: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward corruption sqrt(abar_t) z + sqrt(1 - abar_t) noise."""
    abar = _gather(sched.alpha_bar, t, z)
    return abar.sqrt() * z + (1.0 - abar).sqrt() * noise


def q_step(z_prev: torch.Tensor, t, noise: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """One forward step q(z_t | z_{t-1})."""
    beta = _gather(sched.beta, t, z_prev)
    return (1.0 - beta).sqrt() * z_prev + beta.sqrt() * noise


@dataclass
class DiffusionConfig:
    latent: int = 32
    timesteps: int = 500
    hidden: int = 512
    layers: int = 3
    cond_embed: int = 64
    cond_hidden: int = 64
    n_properties: int = N_PROPERTIES


class ConditionEncoder(nn.Module):
    def __init__(self, cfg: DiffusionConfig):
        super().__init__()
        self.net = mlp([cfg.n_properties, cfg.cond_hidden, cfg.cond_embed])

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return self.net(c)


class Denoiser(nn.Module):
    """MLP on concat(z_t, y); every hidden pre-activation gets the time embedding added."""

    def __init__(self, cfg: DiffusionConfig):
        super().__init__()
        dims = [cfg.latent + cfg.cond_embed] + [cfg.hidden] * (cfg.layers - 1)
        self.hidden = nn.ModuleList(Dense(a, b, "none") for a, b in zip(dims[:-1], dims[1:]))
        self.out = Dense(cfg.hidden, cfg.latent, "none")
        self.width = cfg.hidden

    def forward(self, z_t: torch.Tensor, t, y: torch.Tensor) -> torch.Tensor:
        temb = time_embedding(torch.as_tensor(t).reshape(-1), self.width).to(z_t.dtype)
        h = torch.cat([z_t, y], dim=-1)
        for layer in self.hidden:
            h = torch.relu(layer(h) + temb)
        return self.out(h)


class LatentDiffusion(nn.Module):
    """Condition encoder plus denoiser, with the schedule and latent scaling.

    Latents are standardized per dimension with statistics of the training
    codes before diffusion; ``sample`` returns codes in the original scale.
    """

    def __init__(self, cfg: DiffusionConfig, schedule: NoiseSchedule | None = None):
        super().__init__()
        self.cfg = cfg
        self.schedule = schedule or cosine_schedule(cfg.timesteps)
        self.condition_encoder = ConditionEncoder(cfg)
        self.denoiser = Denoiser(cfg)
        self.register_buffer("latent_mean", torch.zeros(cfg.latent))
        self.register_buffer("latent_std", torch.ones(cfg.latent))
        # range of the scaled training latents; bounds the clean-latent estimate when sampling
        self.register_buffer("latent_lo", torch.full((cfg.latent,), -float("inf")))
        self.register_buffer("latent_hi", torch.full((cfg.latent,), float("inf")))

    def set_latent_stats(self, latents: torch.Tensor) -> None:
        self.latent_mean.copy_(latents.mean(dim=0))
        self.latent_std.copy_(latents.std(dim=0, unbiased=False).clamp(min=1e-6))
        scaled = self.scale(latents)
        self.latent_lo.copy_(scaled.min(dim=0).values)
        self.latent_hi.copy_(scaled.max(dim=0).values)

    def scale(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.latent_mean.to(z.dtype)) / self.latent_std.to(z.dtype)

    def unscale(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.latent_std.to(z.dtype) + self.latent_mean.to(z.dtype)

    def forward(self, z_t: torch.Tensor, t, c: torch.Tensor) -> torch.Tensor:
        return self.denoiser(z_t, t, self.condition_encoder(c))

    def denoise_predict(self, z_t, t, y) -> torch.Tensor:
        return self.denoiser(z_t, t, y)


def ldm_loss(
    model: LatentDiffusion,
    z: torch.Tensor,
    c: torch.Tensor,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared error between injected and predicted noise.

    ``z`` is already in the scaled latent space and ``c`` is the normalized,
    sentinel-masked condition input. ``t`` and ``noise`` are drawn when absent.
    """
    b = z.shape[0]
    if t is None:
        t = torch.randint(1, model.schedule.T + 1, (b,), generator=generator)
    if noise is None:
        noise = torch.randn(z.shape, generator=generator, dtype=z.dtype)
    z_t = q_sample(z, t, noise, model.schedule)
    return (noise - model(z_t, t, c)).pow(2).mean()


def random_condition_mask(
    batch: int, rng: np.random.Generator, prob: float = 0.5, max_masked: int = MAX_MASKED
) -> np.ndarray:
    """Observation mask where each row, with probability ``prob``, hides 1..max_masked entries."""
    mask = np.ones((batch, N_PROPERTIES), dtype=np.float32)
    for i in range(batch):
        if rng.random() < prob:
            k = int(rng.integers(1, max_masked + 1))
            mask[i, rng.choice(N_PROPERTIES, size=k, replace=False)] = 0.0
    return mask


@dataclass
class DiffusionTrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    mask_prob: float = 0.0


@dataclass
class DiffusionHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self):
        return asdict(self)


def train_diffusion(
    model: LatentDiffusion,
    latents: torch.Tensor,
    props: torch.Tensor,
    stats,
    cfg: DiffusionTrainConfig,
    val: tuple[torch.Tensor, torch.Tensor] | None = None,
    on_epoch: Callable[[int, float, float | None], None] | None = None,
) -> DiffusionHistory:
    """Jointly fit condition encoder and denoiser on frozen latent means."""
    from .vae import condition_input

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    gen = torch.Generator().manual_seed(cfg.seed)
    model.set_latent_stats(latents)
    z_all = model.scale(latents)
    c_full = condition_input(props, stats)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = DiffusionHistory()
    best = (float("inf"), None)
    last_good = copy.deepcopy(model.state_dict())
    val_fixed = None
    if val is not None and len(val[0]):
        vgen = torch.Generator().manual_seed(cfg.seed + 7919)
        vz = model.scale(val[0])
        vt = torch.randint(1, model.schedule.T + 1, (len(vz),), generator=vgen)
        vn = torch.randn(vz.shape, generator=vgen)
        vmask = None
        if cfg.mask_prob > 0:
            vmask = torch.from_numpy(random_condition_mask(len(vz), np.random.default_rng([cfg.seed, 3]), cfg.mask_prob))
        val_fixed = (vz, condition_input(val[1], stats, vmask), vt, vn)

    for epoch in range(cfg.epochs):
        model.train()
        perm = rng.permutation(len(z_all))
        total, count = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            c = c_full[idx]
            if cfg.mask_prob > 0:
                m = torch.from_numpy(random_condition_mask(len(idx), rng, cfg.mask_prob))
                c = condition_input(props[idx], stats, m)
            loss = ldm_loss(model, z_all[idx], c, gen)
            if not torch.isfinite(loss):
                model.load_state_dict(last_good)
                raise DivergenceError(f"non-finite diffusion loss at epoch {epoch + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        last_good = copy.deepcopy(model.state_dict())
        history.train.append(total / max(count, 1))
        val_loss = None
        if val_fixed is not None:
            model.eval()
            with torch.no_grad():
                vz, vc, vt, vn = val_fixed
                val_loss = float(ldm_loss(model, vz, vc, t=vt, noise=vn))
            history.val.append(val_loss)
            if val_loss < best[0]:
                best = (val_loss, copy.deepcopy(model.state_dict()))
                history.best_epoch = epoch + 1
        if on_epoch:
            on_epoch(epoch + 1, history.train[-1], val_loss)
        log.info("ldm epoch %d train %.4f val %s", epoch + 1, history.train[-1], val_loss)
    if best[1] is not None:
        model.load_state_dict(best[1])
    return history


def sampling_noise(seed: int, index: int, T: int, latent: int) -> np.ndarray:
    """Per-sample noise: row 0 is z_T, row t (1..T-1) is the fresh noise used when stepping t+1 -> t."""
    return np.random.default_rng([seed, index, 0xD1FF]).standard_normal((T, latent)).astype(np.float32)


@torch.no_grad()
def sample(
    model: LatentDiffusion,
    c: torch.Tensor,
    noise: torch.Tensor,
    denoiser: Callable | None = None,
    clip: bool = True,
) -> torch.Tensor:
    """Ancestral sampling, returning latent codes in the original scale.

    ``c`` is the normalized condition input ``[B, 15]``; ``noise`` has shape
    ``[B, T, latent]`` (see :func:`sampling_noise`). Update per step:
    z_{t-1} = (z_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sqrt(beta_t) * xi,
    with no fresh noise on the last step. ``denoiser(z_t, t, y)`` overrides the
    learned network (used with oracle predictors in tests).

    With ``clip`` the clean latent implied by eps is clamped to the range of the
    training latents and eps is re-derived from it before the update. Without
    this, the near-unit beta of the final step multiplies any prediction error
    by about 1 / sqrt(1 - beta_T) and trajectories leave the data region.
    """
    model.eval()
    sched = model.schedule
    T = sched.T
    predict = denoiser or model.denoise_predict
    y = model.condition_encoder(c)
    z = noise[:, 0, :]
    for t in range(T, 0, -1):
        tt = torch.full((z.shape[0],), t, dtype=torch.long)
        eps = predict(z, tt, y)
        beta, alpha, abar = sched.beta[t - 1], sched.alpha[t - 1], sched.alpha_bar[t - 1]
        if clip and torch.isfinite(model.latent_lo).all():
            z0 = (z - math.sqrt(1.0 - abar) * eps) / math.sqrt(abar)
            z0 = torch.maximum(torch.minimum(z0, model.latent_hi.to(z.dtype)), model.latent_lo.to(z.dtype))
            eps = (z - math.sqrt(abar) * z0) / math.sqrt(1.0 - abar)
        z = (z - (beta / math.sqrt(1.0 - abar)) * eps) / math.sqrt(alpha)
        if t > 1:
            z = z + math.sqrt(beta) * noise[:, T - t + 1, :]
    return model.unscale(z)


def diffusion_manifest(model: LatentDiffusion) -> dict:
    return {"kind": "ldm", "config": asdict(model.cfg), "schedule": {"type": "cosine", "s": 0.008, "max_beta": 0.999}}
