"""Run configuration: profiles, config files, environment override and hashing."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .diffusion import DiffusionConfig, DiffusionTrainConfig
from .graphs import ORDERINGS
from .properties import N_PROPERTIES
from .vae import TrainConfig, VAEConfig

ENV_CONFIG = "CONDGRAPH_CONFIG"
# fields each artifact depends on; a hash covers its scope plus the upstream ones
SCOPES = {
    "dataset": ("seed", "total", "n_min", "n_max", "proportions", "split", "ood"),
    "vae": ("ordering", "feature_dim", "gin_layers", "hidden", "latent", "decoder_layers", "decoder_hidden",
            "beta", "vae_epochs", "vae_lr", "vae_batch"),
    "ldm": ("timesteps", "denoiser_layers", "denoiser_hidden", "cond_embed", "ldm_epochs", "ldm_lr", "ldm_batch"),
}
SCOPE_ORDER = ("dataset", "vae", "ldm")


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    workdir: str = "runs/desk"
    dataset: str | None = None
    workers: int = 1
    # corpus
    total: int = 5000
    n_min: int = 10
    n_max: int = 32
    proportions: str = "paper"
    split: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    ood: bool = False
    # autoencoder
    ordering: str = "bfs_degree"
    feature_dim: int = 10
    gin_layers: int = 2
    hidden: int = 64
    latent: int = 32
    decoder_layers: int = 3
    decoder_hidden: int = 256
    beta: float = 0.05
    vae_epochs: int = 60
    vae_lr: float = 1e-3
    vae_batch: int = 32
    # diffusion
    timesteps: int = 500
    denoiser_layers: int = 3
    denoiser_hidden: int = 512
    cond_embed: int = 64
    ldm_epochs: int = 40
    ldm_lr: float = 1e-3
    ldm_batch: int = 32
    # generation / evaluation
    discretization: str = "gumbel"
    protocol: str = "within"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = (
            "total", "n_max", "n_min", "feature_dim", "gin_layers", "hidden", "latent", "decoder_layers",
            "decoder_hidden", "vae_epochs", "vae_batch", "timesteps", "denoiser_layers", "denoiser_hidden",
            "cond_embed", "ldm_epochs", "ldm_batch", "workers",
        )
        for name in positive:
            v = getattr(self, name)
            if v < (0 if name == "total" else 1):
                raise ValueError(f"{name} must be positive, got {v}")
        for name in ("beta", "vae_lr", "ldm_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if self.discretization not in ("gumbel", "threshold"):
            raise ValueError("discretization must be gumbel or threshold")
        if self.n_min > self.n_max:
            raise ValueError("n_min exceeds n_max")
        if self.timesteps < 2:
            raise ValueError("timesteps must be at least 2")

    # --- derived objects ---------------------------------------------------

    @property
    def data_dir(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.workdir) / "data"

    def checkpoint(self, stage: str, variant: str = "") -> Path:
        return Path(self.workdir) / f"{stage}{variant}.ckpt"

    def vae_config(self, ordering: str | None = None, conditional: bool = False) -> VAEConfig:
        return VAEConfig(
            n_max=self.n_max, feature_dim=self.feature_dim, gin_layers=self.gin_layers, hidden=self.hidden,
            latent=self.latent, decoder_layers=self.decoder_layers, decoder_hidden=self.decoder_hidden,
            beta=self.beta, ordering=ordering or self.ordering, cond_dim=N_PROPERTIES if conditional else 0,
        )

    def vae_train(self) -> TrainConfig:
        return TrainConfig(epochs=self.vae_epochs, lr=self.vae_lr, batch_size=self.vae_batch, seed=self.seed)

    def diffusion_config(self) -> DiffusionConfig:
        return DiffusionConfig(
            latent=self.latent, timesteps=self.timesteps, hidden=self.denoiser_hidden,
            layers=self.denoiser_layers, cond_embed=self.cond_embed,
        )

    def diffusion_train(self, mask_prob: float = 0.0) -> DiffusionTrainConfig:
        return DiffusionTrainConfig(
            epochs=self.ldm_epochs, lr=self.ldm_lr, batch_size=self.ldm_batch, seed=self.seed, mask_prob=mask_prob
        )

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self, scope: str = "ldm") -> str:
        """Digest of the fields an artifact of ``scope`` depends on (paths and worker counts excluded)."""
        keys = [k for s in SCOPE_ORDER[: SCOPE_ORDER.index(scope) + 1] for k in SCOPES[s]]
        d = {k: getattr(self, k) for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def dump(self, path: str | Path) -> None:
        path = Path(path)
        text = json.dumps(self.to_dict(), indent=2) if path.suffix == ".json" else yaml.safe_dump(self.to_dict())
        path.write_text(text)

    def updated(self, **overrides: Any) -> "RunConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)


PROFILES: dict[str, dict[str, Any]] = {
    "desk": {},
    "paper": {
        "profile": "paper",
        "workdir": "runs/paper",
        "total": 1_000_000,
        "n_max": 100,
        "vae_epochs": 200,
        "vae_batch": 256,
        "ldm_epochs": 100,
        "ldm_batch": 256,
    },
}


def read_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ValueError(f"config file {path} must hold a mapping")
    return dict(data)


def load_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None, profile: str | None = None
) -> RunConfig:
    """Resolve profile defaults, then the config file (explicit path or ``$CONDGRAPH_CONFIG``), then overrides."""
    path = path or os.environ.get(ENV_CONFIG)
    file_values = read_config_file(path) if path else {}
    name = profile or file_values.get("profile") or "desk"
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    merged = {**PROFILES[name], **file_values, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    merged["profile"] = name
    return RunConfig().updated(**merged)
