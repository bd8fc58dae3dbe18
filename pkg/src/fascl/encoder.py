"""Patch-based pre-norm Transformer encoder for T x C market windows."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import ConfigError

LN_EPS = 1e-5
INIT_STD = 0.02
CHECKPOINT_VERSION = 1


@dataclass
class EncoderConfig:
    T: int = 64
    C: int = 6
    P: int = 4
    D: int = 64
    L: int = 2
    n_heads: int = 4
    ffn_ratio: int = 4
    dropout_rate: float = 0.0
    pooling_mode: str = "mean_patches"
    use_projection_head: bool = False
    proj_dims: tuple[int, int] = (64, 32)

    def __post_init__(self):
        self.proj_dims = tuple(self.proj_dims)
        self.validate()

    def validate(self) -> None:
        if min(self.T, self.C, self.P, self.D, self.n_heads, self.ffn_ratio) < 1 or self.L < 0:
            raise ConfigError("encoder dimensions must be positive", "D")
        if self.T % self.P:
            raise ConfigError(f"T={self.T} not divisible by patch length P={self.P}", "P")
        if self.D % self.n_heads:
            raise ConfigError(f"D={self.D} not divisible by n_heads={self.n_heads}", "n_heads")
        if self.pooling_mode not in ("mean_patches", "cls"):
            raise ConfigError(f"unknown pooling_mode {self.pooling_mode!r}", "pooling_mode")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)", "dropout_rate")

    @property
    def n_patches(self) -> int:
        return self.T // self.P

    @property
    def out_dim(self) -> int:
        return self.proj_dims[1] if self.use_projection_head else self.D

    @classmethod
    def paper(cls, **overrides) -> "EncoderConfig":
        base = dict(T=64, C=6, P=4, D=384, L=8, n_heads=8, ffn_ratio=4, proj_dims=(384, 128))
        return cls(**(base | overrides))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["proj_dims"] = list(self.proj_dims)
        return d


class Attention(nn.Module):
    def __init__(self, D: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(D, D)
        self.k = nn.Linear(D, D)
        self.v = nn.Linear(D, D)
        self.out = nn.Linear(D, D)
        self.dropout = dropout

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, N, D = x.shape
        h = self.n_heads

        def split(t):
            return t.view(B, N, h, D // h).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        att = (q @ k.transpose(-2, -1)) / math.sqrt(D // h)
        att = F.dropout(att.softmax(dim=-1), self.dropout, self.training)
        y = (att @ v).transpose(1, 2).reshape(B, N, D)
        return self.out(y)


class Block(nn.Module):
    """x + MHSA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        D, hidden = cfg.D, cfg.D * cfg.ffn_ratio
        self.ln1 = nn.LayerNorm(D, eps=LN_EPS)
        self.attn = Attention(D, cfg.n_heads, cfg.dropout_rate)
        self.ln2 = nn.LayerNorm(D, eps=LN_EPS)
        self.fc1 = nn.Linear(D, hidden)
        self.fc2 = nn.Linear(hidden, D)
        self.dropout = cfg.dropout_rate

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        h = F.dropout(F.gelu(self.fc1(self.ln2(x))), self.dropout, self.training)
        return x + self.fc2(h)


class PatchTransformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        N, D = cfg.n_patches, cfg.D
        self.patch_proj = nn.Linear(cfg.P * cfg.C, D)
        self.patch_ln = nn.LayerNorm(D, eps=LN_EPS)
        self.cls_token = nn.Parameter(torch.zeros(D))
        self.pos_embed = nn.Parameter(torch.zeros(N + 1, D))
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.L))
        self.final_ln = nn.LayerNorm(D, eps=LN_EPS)
        if cfg.use_projection_head:
            hidden, out = cfg.proj_dims
            self.proj = nn.Sequential(nn.Linear(D, hidden), nn.GELU(), nn.Linear(hidden, out))
        else:
            self.proj = None

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Final-normalized token matrix (B, N+1, D); token 0 is CLS."""
        cfg = self.cfg
        if x.dim() != 3 or x.shape[1:] != (cfg.T, cfg.C):
            raise ValueError(f"expected windows of shape (B, {cfg.T}, {cfg.C}), got {tuple(x.shape)}")
        B = x.shape[0]
        patches = x.reshape(B, cfg.n_patches, cfg.P * cfg.C)
        e = self.patch_ln(self.patch_proj(patches))
        cls = self.cls_token.expand(B, 1, cfg.D)
        h = torch.cat([cls, e], dim=1) + self.pos_embed
        for blk in self.blocks:
            h = blk(h)
        return self.final_ln(h)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.tokens(x)
        z = h[:, 1:].mean(dim=1) if self.cfg.pooling_mode == "mean_patches" else h[:, 0]
        if self.proj is not None:
            z = self.proj(z)
        return z

    def no_decay_names(self) -> set[str]:
        """Parameters exempt from weight decay: biases, norms, CLS and positions."""
        names = set()
        for name, p in self.named_parameters():
            if p.dim() < 2 or name in ("cls_token", "pos_embed") or ".ln" in name or "_ln" in name:
                names.add(name)
        return names


def init_params(cfg: EncoderConfig, seed: int = 0, dtype=torch.float32) -> PatchTransformerEncoder:
    """Build an encoder with truncated-normal(0, 0.02) weights, zero biases and unit LN scales."""
    model = PatchTransformerEncoder(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            is_norm = ".ln" in name or "_ln" in name
            if is_norm:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("bias"):
                p.zero_()
            else:
                nn.init.trunc_normal_(p, 0.0, INIT_STD, -2 * INIT_STD, 2 * INIT_STD, generator=gen)
    return model.to(dtype)


def encode(model: PatchTransformerEncoder, windows, train_mode: bool = False) -> torch.Tensor:
    """Embed a batch of z-normalized windows.

    Gradients flow when called under autograd; dropout is active only
    with ``train_mode``.
    """
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(np.asarray(windows) if not torch.is_tensor(windows) else windows, dtype=dtype)
    model.train(train_mode)
    return model(x)


@torch.no_grad()
def embed_numpy(model: PatchTransformerEncoder, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    dtype = next(model.parameters()).dtype
    out = [model(torch.as_tensor(windows[i : i + batch_size], dtype=dtype)) for i in range(0, len(windows), batch_size)]
    if not out:
        return np.empty((0, model.cfg.out_dim))
    return torch.cat(out).double().numpy()


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def expected_param_count(cfg: EncoderConfig) -> int:
    """Closed-form parameter count for a config."""
    D, N, hidden = cfg.D, cfg.n_patches, cfg.D * cfg.ffn_ratio
    stem = cfg.P * cfg.C * D + D + 2 * D + D + (N + 1) * D
    block = 4 * (D * D + D) + 2 * (2 * D) + (D * hidden + hidden) + (hidden * D + D)
    head = 0
    if cfg.use_projection_head:
        h, o = cfg.proj_dims
        head = D * h + h + h * o + o
    return stem + cfg.L * block + 2 * D + head


def save_checkpoint(path, model: PatchTransformerEncoder, seed: int, extra: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "seed": seed,
        "params": {k: v.detach().cpu().contiguous() for k, v in model.state_dict().items()},
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[PatchTransformerEncoder, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    cfg = EncoderConfig(**payload["config"])
    model = PatchTransformerEncoder(cfg)
    dtype = next(iter(payload["params"].values())).dtype
    model.to(dtype).load_state_dict(payload["params"])
    model.eval()
    return model, payload
