"""Compact video diffusion transformer with low-rank attention adapters.

Each block runs self-attention over the full [reference | driving | video]
sequence, cross-attention to the identity context, and a feedforward, all
modulated by adaptive layer norm driven by the timestep embedding. The
output head maps video-position tokens back to latent-grid patches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .conditioning import POSITIONAL_SCHEME, VideoUnpatchify
from .kinematics import ShapeError


@dataclass(frozen=True)
class BackboneConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ctx: int = 64
    patch: int = 2
    positional_scheme: str = POSITIONAL_SCHEME
    adapter_rank: int = 4  # 0 disables adapters
    adapter_scale: float | None = None  # defaults to 1/rank

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.adapter_rank < 0:
            raise ValueError("adapter_rank must be >= 0")


class LoRALinear(nn.Module):
    """A frozen-capable linear with an additive low-rank delta.

    forward(x) = base(x) + scale * (x @ A) @ B, with B zero-initialized so
    attachment is an exact identity delta.
    """

    def __init__(self, base: nn.Linear, rank: int, scale: float, generator=None):
        super().__init__()
        if rank < 1:
            raise ValueError("rank must be >= 1")
        self.base = base
        self.rank = rank
        self.scale = scale
        a = torch.empty(base.in_features, rank)
        a.normal_(mean=0.0, std=0.02, generator=generator)
        self.lora_a = nn.Parameter(a)
        self.lora_b = nn.Parameter(torch.zeros(rank, base.out_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * ((x @ self.lora_a) @ self.lora_b)

    def merged_base(self) -> nn.Linear:
        """Fold the low-rank delta into a copy of the base weights."""
        merged = nn.Linear(
            self.base.in_features, self.base.out_features,
            bias=self.base.bias is not None,
        )
        with torch.no_grad():
            merged.weight.copy_(
                self.base.weight + self.scale * (self.lora_a @ self.lora_b).T
            )
            if self.base.bias is not None:
                merged.bias.copy_(self.base.bias)
        return merged


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        q = self.q(x).view(b, n, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k(x).view(b, n, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v(x).view(b, n, self.n_heads, self.d_head).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d_head), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, n, -1)
        return self.out(y)


class CrossAttention(nn.Module):
    def __init__(self, d_model: int, d_ctx: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_ctx, d_model)
        self.v = nn.Linear(d_ctx, d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        m = ctx.shape[1]
        q = self.q(x).view(b, n, self.n_heads, self.d_head).transpose(1, 2)
        k = self.k(ctx).view(b, m, self.n_heads, self.d_head).transpose(1, 2)
        v = self.v(ctx).view(b, m, self.n_heads, self.d_head).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.d_head), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, n, -1)
        return self.out(y)


def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class DiTBlock(nn.Module):
    def __init__(self, d_model: int, n_heads: int, d_ctx: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.attn = SelfAttention(d_model, n_heads)
        self.norm2 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.cross = CrossAttention(d_model, d_ctx, n_heads)
        self.norm3 = nn.LayerNorm(d_model, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, 4 * d_model),
            nn.SiLU(),
            nn.Linear(4 * d_model, d_model),
        )
        # 3 sublayers x (shift, scale, gate); zero-init so blocks start as identity
        self.ada = nn.Linear(d_model, 9 * d_model)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        mods = self.ada(torch.nn.functional.silu(t_emb)).chunk(9, dim=-1)
        s1, sc1, g1, s2, sc2, g2, s3, sc3, g3 = mods
        x = x + g1[:, None, :] * self.attn(_modulate(self.norm1(x), s1, sc1))
        x = x + g2[:, None, :] * self.cross(_modulate(self.norm2(x), s2, sc2), ctx)
        x = x + g3[:, None, :] * self.mlp(_modulate(self.norm3(x), s3, sc3))
        return x


class TimestepEmbed(nn.Module):
    """Sinusoidal features of t in (0,1) followed by a two-layer map."""

    def __init__(self, d_model: int, n_freq: int = 64):
        super().__init__()
        self.n_freq = n_freq
        self.mlp = nn.Sequential(
            nn.Linear(2 * n_freq, d_model),
            nn.SiLU(),
            nn.Linear(d_model, d_model),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        freqs = torch.exp(
            math.log(1000.0)
            * torch.arange(self.n_freq, dtype=t.dtype, device=t.device)
            / self.n_freq
        )
        ang = t[:, None] * freqs[None, :]
        return self.mlp(torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1))


class DiT(nn.Module):
    """The velocity network over assembled token sequences."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.t_embed = TimestepEmbed(cfg.d_model)
        self.blocks = nn.ModuleList(
            [DiTBlock(cfg.d_model, cfg.n_heads, cfg.d_ctx) for _ in range(cfg.n_layers)]
        )
        self.norm_out = nn.LayerNorm(cfg.d_model, elementwise_affine=False)
        self.unpatchify = VideoUnpatchify(cfg.d_model, cfg.patch)

    def forward(
        self,
        tokens: torch.Tensor,  # (B, L, d_model)
        t: torch.Tensor,  # (B,) in (0, 1)
        identity_context: torch.Tensor,  # (B, M*P, d_ctx)
        video_mask: torch.Tensor,  # (L,) bool
    ) -> torch.Tensor:
        """Returns the predicted-velocity tokens at video positions."""
        if tokens.shape[2] != self.cfg.d_model:
            raise ShapeError(
                f"token width {tokens.shape[2]} != d_model {self.cfg.d_model}"
            )
        if not torch.all(torch.isfinite(t)):
            raise ValueError("timesteps must be finite")
        t_emb = self.t_embed(t)
        x = tokens
        for block in self.blocks:
            x = block(x, t_emb, identity_context)
        x = self.norm_out(x)
        return x[:, video_mask, :]

    def predict_velocity(
        self,
        tokens: torch.Tensor,
        t: torch.Tensor,
        identity_context: torch.Tensor,
        video_mask: torch.Tensor,
        latent_frames: int,
        latent_h: int,
        latent_w: int,
    ) -> torch.Tensor:
        """Velocity as a latent grid (B, 16, N, h, w)."""
        video_tokens = self.forward(tokens, t, identity_context, video_mask)
        return self.unpatchify(video_tokens, latent_frames, latent_h, latent_w)


# ---------------------------------------------------------------------------
# low-rank adapter management


def _attention_projections(model: nn.Module):
    for module in model.modules():
        if isinstance(module, (SelfAttention, CrossAttention)):
            yield module


def attach_adapters(
    model: nn.Module,
    rank: int,
    scale: float | None = None,
    seed: int = 0,
    freeze_base: bool = False,
) -> nn.Module:
    """Wrap every attention q/k/v projection with a low-rank adapter.

    Down matrices are seeded-random, up matrices zero, so the wrapped model
    is bit-identical to the unwrapped one until training moves the adapters.
    """
    if rank < 1:
        raise ValueError("rank must be >= 1")
    if scale is None:
        scale = 1.0 / rank
    gen = torch.Generator().manual_seed(seed)
    for attn in _attention_projections(model):
        for name in ("q", "k", "v"):
            proj = getattr(attn, name)
            if isinstance(proj, LoRALinear):
                raise RuntimeError("adapters already attached")
            setattr(attn, name, LoRALinear(proj, rank, scale, generator=gen))
    if freeze_base:
        adapters = set(id(p) for p in adapter_parameters(model))
        for p in model.parameters():
            if id(p) not in adapters:
                p.requires_grad_(False)
    return model


def merge_adapters(model: nn.Module) -> nn.Module:
    """Fold adapters into base weights and remove them. No-op when none."""
    for attn in _attention_projections(model):
        for name in ("q", "k", "v"):
            proj = getattr(attn, name)
            if isinstance(proj, LoRALinear):
                setattr(attn, name, proj.merged_base())
    return model


def adapter_parameters(model: nn.Module):
    for module in model.modules():
        if isinstance(module, LoRALinear):
            yield module.lora_a
            yield module.lora_b


def has_adapters(model: nn.Module) -> bool:
    return any(isinstance(m, LoRALinear) for m in model.modules())
