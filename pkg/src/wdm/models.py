"""Encoders and the separable critic f(x, y) = <phi(x), psi(y)>."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

ACTIVATIONS = {"relu": nn.ReLU, "tanh": nn.Tanh, "softplus": nn.Softplus, "elu": nn.ELU}
COUPLINGS = ("separable_dot", "bilinear")
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    input_shape: tuple[int, ...]
    arch: str = "mlp"
    hidden_widths: list[int] = field(default_factory=lambda: [256, 256])
    repr_dim: int = 64
    activation: str = "relu"
    zero_init_head: bool = False
    unit_norm: bool = False

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        self.hidden_widths = [int(w) for w in self.hidden_widths]
        if self.arch not in ("mlp", "conv"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.arch == "conv" and len(self.input_shape) != 3:
            raise ValueError("conv encoders need (H, W, C) inputs")
        if self.repr_dim < 1:
            raise ValueError("repr_dim must be positive")

    @classmethod
    def default_conv(cls, input_shape, **kw) -> "EncoderConfig":
        return cls(input_shape, arch="conv", hidden_widths=[32, 64, 64, 128], **kw)


class MLPEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        act = ACTIVATIONS[cfg.activation]
        layers: list[nn.Module] = [nn.Flatten()]
        width = int(np.prod(cfg.input_shape))
        for h in cfg.hidden_widths:
            layers += [nn.Linear(width, h), act()]
            width = h
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(width, cfg.repr_dim)

    def forward(self, x):
        return self.head(self.body(x))


class ConvEncoder(nn.Module):
    """Stride-2 conv blocks followed by a linear head; takes NHWC input."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        act = ACTIVATIONS[cfg.activation]
        h, w, c = cfg.input_shape
        layers: list[nn.Module] = []
        for ch in cfg.hidden_widths:
            layers += [nn.Conv2d(c, ch, 3, stride=2, padding=1), act()]
            c, h, w = ch, (h + 1) // 2, (w + 1) // 2
        self.body = nn.Sequential(*layers, nn.Flatten())
        self.head = nn.Linear(c * h * w, cfg.repr_dim)

    def forward(self, x):
        return self.head(self.body(x.permute(0, 3, 1, 2)))


def build_encoder(cfg: EncoderConfig) -> nn.Module:
    enc = MLPEncoder(cfg) if cfg.arch == "mlp" else ConvEncoder(cfg)
    if cfg.zero_init_head:
        nn.init.zeros_(enc.head.weight)
        nn.init.zeros_(enc.head.bias)
    return enc


class Critic(nn.Module):
    """Score function built from an x-side and a y-side encoder.

    ``score_matrix`` gives S_ij = f(x_i, y_j) for all pairs in a batch;
    ``pair_scores`` gives only the aligned f(x_i, y_i), which is what the
    gradient penalty differentiates.
    """

    def __init__(self, cfg: EncoderConfig, coupling: str = "separable_dot"):
        super().__init__()
        if coupling not in COUPLINGS:
            raise ValueError(f"unknown coupling {coupling!r}")
        self.cfg = cfg
        self.coupling = coupling
        self.encoder_x = build_encoder(cfg)
        self.encoder_y = build_encoder(cfg)
        if coupling == "bilinear":
            self.weight = nn.Parameter(torch.eye(cfg.repr_dim))

    def _check(self, batch):
        if tuple(batch.shape[1:]) != self.cfg.input_shape:
            raise ValueError(f"batch shape {tuple(batch.shape[1:])} != configured {self.cfg.input_shape}")

    def encode(self, which: str, batch) -> torch.Tensor:
        batch = self._as_tensor(batch)
        self._check(batch)
        enc = {"x": self.encoder_x, "y": self.encoder_y}[which.split("_")[0]]
        z = enc(batch)
        if self.cfg.unit_norm:
            z = nn.functional.normalize(z, dim=1)
        return z

    def score_matrix(self, zx: torch.Tensor, zy: torch.Tensor) -> torch.Tensor:
        if self.coupling == "bilinear":
            return zx @ self.weight @ zy.T
        return zx @ zy.T

    def scores(self, x, y) -> torch.Tensor:
        return self.score_matrix(self.encode("x", x), self.encode("y", y))

    def pair_scores(self, x, y) -> torch.Tensor:
        zx, zy = self.encode("x", x), self.encode("y", y)
        if self.coupling == "bilinear":
            zx = zx @ self.weight
        return (zx * zy).sum(dim=1)

    def _as_tensor(self, batch):
        if isinstance(batch, torch.Tensor):
            return batch
        p = next(self.parameters())
        return torch.as_tensor(np.asarray(batch), dtype=p.dtype, device=p.device)


def score_matrix(zx, zy, coupling: str = "separable_dot", weight=None):
    """Functional form of :meth:`Critic.score_matrix` for plain arrays or tensors."""
    zx, zy = torch.as_tensor(zx), torch.as_tensor(zy)
    if coupling == "bilinear":
        return zx @ torch.as_tensor(weight, dtype=zx.dtype) @ zy.T
    return zx @ zy.T


def build_critic(cfg: EncoderConfig, coupling: str = "separable_dot", seed: int = 0,
                 dtype=torch.float32) -> Critic:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        critic = Critic(cfg, coupling)
    return critic.to(dtype)


def parameter_checksum(module: nn.Module) -> str:
    import hashlib
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_checkpoint(critic: Critic, path) -> None:
    header = {"encoder_config": asdict(critic.cfg), "coupling": critic.coupling,
              "dtype": str(next(critic.parameters()).dtype).replace("torch.", ""),
              "format_version": CHECKPOINT_VERSION}
    arrays = {name: t.detach().cpu().numpy() for name, t in critic.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path) -> Critic:
    with np.load(path, allow_pickle=False) as arc:
        header = json.loads(str(arc["__header__"]))
        if header["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['format_version']!r}")
        cfg = EncoderConfig(**header["encoder_config"])
        critic = Critic(cfg, header["coupling"]).to(getattr(torch, header["dtype"]))
        state = {k: torch.from_numpy(arc[k]) for k in arc.files if k != "__header__"}
    critic.load_state_dict(state)
    return critic
