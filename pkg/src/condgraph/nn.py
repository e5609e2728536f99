"""Small dense-network toolkit on top of torch: layers with Glorot init,
Adam with a finite-parameter guard, sinusoidal time embeddings, the
straight-through Gumbel-Softmax, a finite-difference gradient oracle, and
the checkpoint container."""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn

ACTIVATIONS = ("relu", "none")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or parameter."""


def glorot_uniform_(weight: torch.Tensor) -> torch.Tensor:
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return weight.uniform_(-bound, bound)


def dense_forward(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, activation: str = "relu") -> torch.Tensor:
    """Affine map ``x @ weight.T + bias`` with optional ReLU."""
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(
            f"shape mismatch: input {tuple(x.shape)}, weight {tuple(weight.shape)}, bias {tuple(bias.shape)}"
        )
    out = x @ weight.T + bias
    return torch.relu(out) if activation == "relu" else out


class Dense(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = nn.Parameter(torch.empty(out_dim, in_dim))
        self.bias = nn.Parameter(torch.zeros(out_dim))
        self.activation = activation
        glorot_uniform_(self.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense_forward(x, self.weight, self.bias, self.activation)


def mlp(dims: Sequence[int], final_activation: str = "none") -> nn.Sequential:
    """Stack of Dense layers, ReLU between them."""
    layers = [
        Dense(a, b, "relu" if i < len(dims) - 2 else final_activation)
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))
    ]
    return nn.Sequential(*layers)


def backward(loss, params: Iterable[torch.Tensor]) -> None:
    """Populate ``.grad`` of every parameter with d(loss)/d(param).

    Gradients are reset first. A loss that does not depend on the parameters
    (a constant) leaves zero gradients.
    """
    if not isinstance(loss, torch.Tensor):
        raise RuntimeError("backward needs a scalar produced by a forward pass")
    if loss.ndim != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    params = list(params)
    for p in params:
        p.grad = torch.zeros_like(p)
    if loss.requires_grad:
        loss.backward()


class Adam:
    """Adam (beta1 0.9, beta2 0.999, eps 1e-8) that refuses non-finite steps."""

    def __init__(self, params: Iterable[nn.Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.opt = torch.optim.Adam(self.params, lr=lr, betas=betas, eps=eps)

    def zero_grad(self) -> None:
        self.opt.zero_grad(set_to_none=False)

    def step(self) -> None:
        self.opt.step()
        for p in self.params:
            if not torch.isfinite(p).all():
                raise DivergenceError(f"non-finite values in parameter of shape {tuple(p.shape)} after Adam step")

    @property
    def step_count(self) -> int:
        states = [self.opt.state[p] for p in self.params if p in self.opt.state]
        return int(states[0]["step"]) if states else 0

    def moments(self, p: nn.Parameter) -> tuple[torch.Tensor, torch.Tensor]:
        st = self.opt.state[p]
        return st["exp_avg"], st["exp_avg_sq"]

    def state_dict(self):
        return self.opt.state_dict()

    def load_state_dict(self, state):
        self.opt.load_state_dict(state)


def time_embedding(t, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps.

    Even columns hold ``sin(t * w_k)``, odd columns ``cos(t * w_k)`` with
    ``w_k = 10000 ** (-2k / dim)``. Accepts a scalar or a 1-d batch of steps.
    """
    if dim % 2:
        raise ValueError(f"time embedding dimension must be even, got {dim}")
    t = torch.as_tensor(t, dtype=torch.float64)
    scalar = t.ndim == 0
    t = t.reshape(-1, 1)
    freqs = torch.pow(10000.0, -torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    angles = t * freqs
    emb = torch.stack([torch.sin(angles), torch.cos(angles)], dim=-1).reshape(t.shape[0], dim)
    return emb[0] if scalar else emb


def sample_gumbel(shape, generator: torch.Generator | None = None, dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=torch.float64)
    u = u.clamp(1e-12, 1.0 - 1e-12)
    return (-torch.log(-torch.log(u))).to(dtype)


def gumbel_softmax_st(
    logits: torch.Tensor,
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
    noise: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Straight-through Gumbel-Softmax over the last axis.

    Returns ``(hard, relaxed)``. ``hard`` is one-hot in the forward pass but
    carries the gradient of ``relaxed``. Pass ``noise`` to supply the Gumbel
    draws explicitly.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if noise is None:
        noise = sample_gumbel(logits.shape, generator, logits.dtype)
    relaxed = torch.softmax((logits + noise) / temperature, dim=-1)
    index = relaxed.argmax(dim=-1, keepdim=True)
    onehot = torch.zeros_like(relaxed).scatter_(-1, index, 1.0)
    hard = onehot - relaxed.detach() + relaxed
    return hard, relaxed


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def numerical_gradient(fn: Callable[[], torch.Tensor], param: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``param``."""
    grad = torch.zeros_like(param)
    flat = param.data.view(-1)
    gflat = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return grad


def gradient_check(
    fn: Callable[[], torch.Tensor], params: Sequence[torch.Tensor], h: float = 1e-5, floor: float = 1e-6
) -> float:
    """Largest relative error between autograd and central differences.

    Relative error per entry is ``|a - n| / max(|a| + |n|, floor)``.
    """
    params = list(params)
    backward(fn(), params)
    worst = 0.0
    for p in params:
        analytic = p.grad.detach().clone()
        numeric = numerical_gradient(fn, p, h)
        err = (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=floor)
        worst = max(worst, float(err.max()))
    return worst


# --- checkpoint container -------------------------------------------------

CHECKPOINT_MAGIC = b"CGCKPT01"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, sections: Mapping[str, Mapping[str, torch.Tensor]], manifest: Mapping) -> None:
    """Write named tensors as raw float32 little-endian plus a JSON header.

    Layout: 8-byte magic, uint64 header length, UTF-8 JSON header, blob.
    The header lists every tensor as ``section.name`` with shape and byte
    offset, and carries the hyperparameter manifest.
    """
    entries, blobs, offset = [], [], 0
    for section in sorted(sections):
        for name, tensor in sections[section].items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
            raw = arr.tobytes()
            entries.append({"name": f"{section}.{name}", "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = {"version": CHECKPOINT_VERSION, "dtype": "float32-le", "manifest": dict(manifest), "tensors": entries}
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".partial")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(hjson)))
        fh.write(hjson)
        for raw in blobs:
            fh.write(raw)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, dict[str, torch.Tensor]], dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    base = 16 + hlen
    sections: dict[str, dict[str, torch.Tensor]] = {}
    for entry in header["tensors"]:
        section, name = entry["name"].split(".", 1)
        start = base + entry["offset"]
        arr = np.frombuffer(data[start : start + entry["nbytes"]], dtype="<f4").reshape(entry["shape"])
        sections.setdefault(section, {})[name] = torch.from_numpy(arr.astype(np.float32))
    return sections, header["manifest"]


def state_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().astype("<f4").tobytes())
    return h.hexdigest()[:16]
