"""End-to-end generators, checkpoint plumbing and training drivers."""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .dataset import DatasetRecord, NormalizationStats
from .diffusion import (
    DiffusionConfig,
    DiffusionTrainConfig,
    LatentDiffusion,
    diffusion_manifest,
    random_condition_mask,
    sample,
    sampling_noise,
    train_diffusion,
)
from .graphs import EmptyGenerationError, Graph, GraphError, from_dense_adjacency
from .nn import load_checkpoint, sample_gumbel, save_checkpoint, state_digest
from .properties import N_PROPERTIES, ConditionVector
from .vae import (
    GraphTensors,
    GraphVAE,
    TrainConfig,
    VAEConfig,
    condition_input,
    discretize,
    encode_means,
    graph_tensors,
    train_vae,
    triangle_to_matrix,
)

log = logging.getLogger(__name__)

MAX_RETRIES = 5
DISCRETIZATIONS = ("gumbel", "threshold")


class MissingEncoderError(FileNotFoundError):
    """Diffusion training or sampling was asked for without a VAE checkpoint."""


def records_to_tensors(records: Sequence[DatasetRecord], cfg: VAEConfig) -> GraphTensors:
    return graph_tensors(
        [r.graph for r in records], [r.properties for r in records], cfg.n_max, cfg.ordering, cfg.feature_dim
    )


def condition_batch(conds: Sequence[ConditionVector], stats: NormalizationStats) -> torch.Tensor:
    """Normalized, sentinel-masked model input for a list of condition vectors."""
    values = torch.tensor([c.values for c in conds], dtype=torch.float32).reshape(-1, N_PROPERTIES)
    mask = torch.tensor([c.mask for c in conds], dtype=torch.bool).reshape(-1, N_PROPERTIES)
    return condition_input(values, stats, mask)


@dataclass
class GenerationResult:
    graph: Graph | None
    attempts: int

    @property
    def failed(self) -> bool:
        return self.graph is None


def _gumbel_noise(seed: int, index: int, attempt: int, n_pairs: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(np.random.default_rng([seed, index, attempt, 0x6B]).integers(2**62)))
    return sample_gumbel((n_pairs, 2), gen)


class LatentGenerator:
    """Shared retry loop: draw a latent per sample, decode, discretize, clean up.

    Every sample draws its randomness from ``(seed, index, attempt)`` only, so
    results do not depend on batch composition.
    """

    def __init__(self, vae: GraphVAE, discretization: str = "gumbel", retries: int = MAX_RETRIES):
        if discretization not in DISCRETIZATIONS:
            raise ValueError(f"unknown discretization {discretization!r}")
        self.vae = vae
        self.discretization = discretization
        self.retries = retries

    def _latents(self, cond: torch.Tensor, seed: int, indices: Sequence[int], attempt: int) -> torch.Tensor:
        raise NotImplementedError

    def _decoder_cond(self, cond: torch.Tensor) -> torch.Tensor | None:
        return None

    def _condition(self, conds: Sequence[ConditionVector]) -> torch.Tensor:
        raise NotImplementedError

    @torch.no_grad()
    def generate(
        self, conds: Sequence[ConditionVector], seed: int = 0, start_index: int = 0, batch_size: int = 512
    ) -> list[GenerationResult]:
        results: list[GenerationResult] = []
        for lo in range(0, len(conds), batch_size):
            part = conds[lo : lo + batch_size]
            idx = list(range(start_index + lo, start_index + lo + len(part)))
            results.extend(self._generate_batch(part, seed, idx))
        return results

    def _generate_batch(self, conds, seed, indices) -> list[GenerationResult]:
        self.vae.eval()
        cond = self._condition(conds)
        out: list[GenerationResult | None] = [None] * len(conds)
        pending = list(range(len(conds)))
        cfg = self.vae.cfg
        for attempt in range(self.retries + 1):
            if not pending:
                break
            sel = torch.tensor(pending)
            z = self._latents(cond[sel], seed, [indices[i] for i in pending], attempt)
            logits = self.vae.decode_logits(z, self._decoder_cond(cond[sel]))
            if self.discretization == "gumbel":
                noise = torch.stack([_gumbel_noise(seed, indices[i], attempt, cfg.n_pairs) for i in pending])
                bits = discretize(logits, "gumbel", noise=noise)
            else:
                bits = discretize(logits, "threshold")
            mats = triangle_to_matrix(bits.numpy(), cfg.n_max)
            still = []
            for k, i in enumerate(pending):
                try:
                    out[i] = GenerationResult(from_dense_adjacency(mats[k]), attempt + 1)
                except EmptyGenerationError:
                    still.append(i)
            pending = still
        for i in pending:
            out[i] = GenerationResult(None, self.retries + 1)
        return out  # type: ignore[return-value]


class NGGGenerator(LatentGenerator):
    """Condition -> latent diffusion sample -> VAE decoder -> graph."""

    def __init__(self, vae, ldm: LatentDiffusion, stats: NormalizationStats, discretization="gumbel", retries=MAX_RETRIES):
        super().__init__(vae, discretization, retries)
        self.ldm = ldm
        self.stats = stats

    def _condition(self, conds):
        return condition_batch(conds, self.stats)

    def _latents(self, cond, seed, indices, attempt):
        T, latent = self.ldm.schedule.T, self.ldm.cfg.latent
        noise = torch.from_numpy(np.stack([sampling_noise(seed + 7919 * attempt, i, T, latent) for i in indices]))
        return sample(self.ldm, cond, noise)


class ConditionalVAEGenerator(LatentGenerator):
    """Baseline: z ~ N(0, I) decoded together with the normalized condition."""

    def __init__(self, vae, stats: NormalizationStats, discretization="gumbel", retries=MAX_RETRIES):
        if not vae.cfg.cond_dim:
            raise ValueError("baseline generator needs a conditional decoder")
        super().__init__(vae, discretization, retries)
        self.stats = stats

    def _condition(self, conds):
        return condition_batch(conds, self.stats)

    def _decoder_cond(self, cond):
        return cond

    def _latents(self, cond, seed, indices, attempt):
        rows = [np.random.default_rng([seed + 7919 * attempt, i, 0xC0DE]).standard_normal(self.vae.cfg.latent) for i in indices]
        return torch.tensor(np.stack(rows), dtype=torch.float32)


# --- checkpoints ------------------------------------------------------------


def _prefixed(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return dict(module.state_dict())


def save_vae(path, model: GraphVAE, stats: NormalizationStats | None = None, config_hash: str | None = None, extra=None):
    decoder_section = "conditional_decoder" if model.cfg.cond_dim else "decoder"
    manifest = {
        "kind": "cvae" if model.cfg.cond_dim else "vae",
        "vae": asdict(model.cfg),
        "ordering": model.cfg.ordering,
        "beta": model.cfg.beta,
        "config_hash": config_hash,
        "digest": state_digest(model),
        "normalization": stats.to_dict() if stats is not None else None,
    }
    manifest.update(extra or {})
    save_checkpoint(path, {"encoder": _prefixed(model.encoder), decoder_section: _prefixed(model.decoder)}, manifest)


def load_vae(path) -> tuple[GraphVAE, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingEncoderError(f"missing encoder: no VAE checkpoint at {path}")
    sections, manifest = load_checkpoint(path)
    model = GraphVAE(VAEConfig(**manifest["vae"]))
    model.encoder.load_state_dict(sections["encoder"])
    model.decoder.load_state_dict(sections.get("decoder") or sections["conditional_decoder"])
    model.eval()
    return model, manifest


def save_ldm(path, ldm: LatentDiffusion, stats: NormalizationStats, vae_digest: str | None, config_hash=None, extra=None):
    manifest = diffusion_manifest(ldm)
    manifest.update(
        {
            "normalization": stats.to_dict(),
            "vae_digest": vae_digest,
            "config_hash": config_hash,
            "T": ldm.schedule.T,
        }
    )
    manifest.update(extra or {})
    sections = {
        "denoiser": _prefixed(ldm.denoiser),
        "condition_encoder": _prefixed(ldm.condition_encoder),
        "latent_scale": {"mean": ldm.latent_mean, "std": ldm.latent_std, "lo": ldm.latent_lo, "hi": ldm.latent_hi},
    }
    save_checkpoint(path, sections, manifest)


def load_ldm(path) -> tuple[LatentDiffusion, dict]:
    sections, manifest = load_checkpoint(path)
    ldm = LatentDiffusion(DiffusionConfig(**manifest["config"]))
    ldm.denoiser.load_state_dict(sections["denoiser"])
    ldm.condition_encoder.load_state_dict(sections["condition_encoder"])
    for key in ("mean", "std", "lo", "hi"):
        getattr(ldm, f"latent_{key}").copy_(sections["latent_scale"][key])
    ldm.eval()
    return ldm, manifest


def check_hash(kind: str, found: str | None, expected: str | None) -> bool:
    if found and expected and found != expected:
        warnings.warn(f"{kind} was produced under config hash {found}, current config is {expected}", stacklevel=2)
        return False
    return True


def load_ngg(vae_path, ldm_path, discretization="gumbel", retries=MAX_RETRIES) -> NGGGenerator:
    vae, vman = load_vae(vae_path)
    ldm, lman = load_ldm(ldm_path)
    if lman.get("vae_digest") and lman["vae_digest"] != vman.get("digest"):
        warnings.warn("diffusion checkpoint was trained on a different VAE", stacklevel=2)
    stats = NormalizationStats.from_dict(lman["normalization"])
    return NGGGenerator(vae, ldm, stats, discretization, retries)


def load_cvae(path, discretization="gumbel", retries=MAX_RETRIES) -> ConditionalVAEGenerator:
    vae, man = load_vae(path)
    return ConditionalVAEGenerator(vae, NormalizationStats.from_dict(man["normalization"]), discretization, retries)


# --- training drivers -------------------------------------------------------


def fit_vae(
    train: Sequence[DatasetRecord],
    val: Sequence[DatasetRecord],
    cfg: VAEConfig,
    tcfg: TrainConfig,
    stats: NormalizationStats | None = None,
    mask_prob: float = 0.0,
    on_epoch: Callable | None = None,
):
    torch.manual_seed(tcfg.seed)
    model = GraphVAE(cfg)
    tr = records_to_tensors(train, cfg)
    va = records_to_tensors(val, cfg) if val else None
    mask_fn = (lambda b, rng: random_condition_mask(b, rng, mask_prob)) if mask_prob > 0 else None
    history = train_vae(model, tr, tcfg, va, stats, mask_fn, on_epoch)
    return model, history


def fit_ldm(
    vae: GraphVAE,
    train: Sequence[DatasetRecord],
    val: Sequence[DatasetRecord],
    stats: NormalizationStats,
    cfg: DiffusionConfig,
    tcfg: DiffusionTrainConfig,
    on_epoch: Callable | None = None,
):
    if cfg.latent != vae.cfg.latent:
        raise ValueError("diffusion latent size must match the VAE")
    torch.manual_seed(tcfg.seed)
    ldm = LatentDiffusion(cfg)
    tr = records_to_tensors(train, vae.cfg)
    latents = encode_means(vae, tr)
    val_pair = None
    if val:
        va = records_to_tensors(val, vae.cfg)
        val_pair = (encode_means(vae, va), va.properties)
    history = train_diffusion(ldm, latents, tr.properties, stats, tcfg, val_pair, on_epoch)
    return ldm, history
