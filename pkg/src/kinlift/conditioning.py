"""Token assembly: reference tokens, driving tokens, video tokens, and the
multi-frame identity context for cross-attention.

Token layout (the backbone's input ABI):
    [reference tokens | driving tokens | video tokens]
Reference tokens are ordered frame-major (all patches of frame 0, then
frame 1, ...); driving and video tokens are time-major. A boolean segment
mask marks the video positions; only those are denoised and enter the loss.
Positional identifiers are fixed sinusoids factorized over (frame/time,
row, column), plus a learned per-segment embedding. Scheme id:
"sincos3d+segment".
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .encoders import (
    LATENT_CHANNELS,
    TEMPORAL_FACTOR,
    EncoderConfig,
    ExpressionEmbed,
    ImageAutoencoder,
    _check_divisible,
)
from .kinematics import ShapeError

POSITIONAL_SCHEME = "sincos3d+segment"


def sincos_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sinusoidal embedding of integer positions -> (len, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1)
    )
    ang = positions.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)
    if emb.shape[1] < dim:
        emb = torch.cat([emb, torch.zeros(emb.shape[0], dim - emb.shape[1], dtype=emb.dtype)], dim=1)
    return emb


def factorized_positions(n_frames: int, n_rows: int, n_cols: int, d_model: int,
                         dtype=torch.float32) -> torch.Tensor:
    """(n_frames, n_rows, n_cols, d_model) positional table; the channel axis
    is split into thirds for frame, row, and column sinusoids."""
    d3 = d_model // 3
    df = d_model - 2 * d3
    f = sincos_embedding(torch.arange(n_frames), df)
    r = sincos_embedding(torch.arange(n_rows), d3)
    c = sincos_embedding(torch.arange(n_cols), d3)
    out = torch.zeros(n_frames, n_rows, n_cols, d_model, dtype=torch.float64)
    out[..., :df] = f[:, None, None, :]
    out[..., df : df + d3] = r[None, :, None, :]
    out[..., df + d3 :] = c[None, None, :, :]
    return out.to(dtype)


class PatchEmbed2d(nn.Module):
    """Learned linear map over non-overlapping p x p patches of a latent grid."""

    def __init__(self, in_channels: int, d_model: int, patch: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_channels, d_model, patch, stride=patch)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, h, w) -> (B, h/p * w/p, d_model), row-major patch order."""
        _check_divisible(x.shape[2], self.patch, "latent h")
        _check_divisible(x.shape[3], self.patch, "latent w")
        return self.proj(x).flatten(2).transpose(1, 2)


class VideoPatchEmbed(nn.Module):
    """Spatiotemporal patch embedding for video latents.

    Consumes (B, 16, N, h, w) per-frame latents and groups 4 consecutive
    latent frames per token, realizing the 4x temporal token compression.
    """

    def __init__(self, d_model: int, patch: int, temporal: int = TEMPORAL_FACTOR):
        super().__init__()
        self.patch = patch
        self.temporal = temporal
        self.proj = nn.Conv3d(
            LATENT_CHANNELS, d_model, (temporal, patch, patch),
            stride=(temporal, patch, patch),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """(B, 16, N, h, w) -> (B, N/4 * h/p * w/p, d_model), time-major."""
        _check_divisible(z.shape[2], self.temporal, "N")
        _check_divisible(z.shape[3], self.patch, "latent h")
        _check_divisible(z.shape[4], self.patch, "latent w")
        return self.proj(z).flatten(2).transpose(1, 2)


class VideoUnpatchify(nn.Module):
    """Inverse geometry of VideoPatchEmbed: tokens -> (B, 16, N, h, w)."""

    def __init__(self, d_model: int, patch: int, temporal: int = TEMPORAL_FACTOR):
        super().__init__()
        self.patch = patch
        self.temporal = temporal
        self.proj = nn.Linear(d_model, LATENT_CHANNELS * temporal * patch * patch)

    def forward(self, tokens: torch.Tensor, latent_frames: int, h: int, w: int) -> torch.Tensor:
        b = tokens.shape[0]
        p, tf = self.patch, self.temporal
        t_tok = latent_frames // tf
        x = self.proj(tokens)
        x = x.view(b, t_tok, h // p, w // p, LATENT_CHANNELS, tf, p, p)
        x = x.permute(0, 4, 1, 5, 2, 6, 3, 7)
        return x.reshape(b, LATENT_CHANNELS, latent_frames, h, w)


class IdentityContextEncoder(nn.Module):
    """Four-layer conv featurizer mapping each reference frame to patch
    features for cross-attention. Context length scales linearly with the
    number of reference frames."""

    def __init__(self, d_ctx: int, base_width: int = 16):
        super().__init__()
        w = base_width
        act = nn.SiLU()
        self.net = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(4 * w, d_ctx, 3, stride=1, padding=1),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """(B, M, 3, H, W) -> (B, M*P, d_ctx) with P = H/8 * W/8 patches."""
        if images.ndim != 5:
            raise ShapeError(f"expected (B,M,3,H,W), got {tuple(images.shape)}")
        b, m = images.shape[:2]
        feat = self.net(images.flatten(0, 1))  # (B*M, d_ctx, H/8, W/8)
        feat = feat.flatten(2).transpose(1, 2)  # (B*M, P, d_ctx)
        return feat.reshape(b, m * feat.shape[1], feat.shape[2])


class Conditioner(nn.Module):
    """Builds the three token segments from raw conditioning inputs.

    ``exp_align`` picks how driving coefficients map onto temporally
    compressed latent frames: "first" uses the first source frame of each
    4-frame group, "mean" averages the group.
    """

    SEG_REF, SEG_DRV, SEG_VID = 0, 1, 2

    def __init__(
        self,
        d_model: int,
        exp_dim: int,
        patch: int = 2,
        enc_cfg: EncoderConfig = EncoderConfig(),
        use_expression: bool = True,
        use_latent_injection: bool = True,
        exp_align: str = "first",
    ):
        super().__init__()
        if exp_align not in ("first", "mean"):
            raise ValueError("exp_align must be 'first' or 'mean'")
        self.d_model = d_model
        self.patch = patch
        self.temporal = enc_cfg.temporal_factor
        self.use_expression = use_expression
        self.use_latent_injection = use_latent_injection
        self.exp_align = exp_align

        self.exp_embed_ref = ExpressionEmbed(exp_dim, d_model)
        self.exp_embed_drv = ExpressionEmbed(exp_dim, d_model)
        # reference stream carries image latent + shading latent, channel-concat
        self.ref_patch_embed = PatchEmbed2d(2 * LATENT_CHANNELS, d_model, patch)
        self.drv_patch_embed = PatchEmbed2d(LATENT_CHANNELS, d_model, patch)
        self.video_patch_embed = VideoPatchEmbed(d_model, patch, enc_cfg.temporal_factor)
        self.segment_embed = nn.Parameter(torch.zeros(3, d_model))
        nn.init.normal_(self.segment_embed, std=0.02)

    def _pos(self, n_frames: int, hp: int, wp: int, like: torch.Tensor) -> torch.Tensor:
        table = factorized_positions(n_frames, hp, wp, self.d_model, dtype=like.dtype)
        return table.reshape(n_frames * hp * wp, self.d_model).to(like.device)

    def build_reference_tokens(
        self,
        image_latents: torch.Tensor,  # (B, M, 16, h, w)
        shading_latents: torch.Tensor,  # (B, M, 16, h, w)
        coeffs: torch.Tensor,  # (B, M, exp_dim)
    ) -> torch.Tensor:
        if image_latents.shape[1] == 0:
            raise ShapeError("reference set must be non-empty")
        if not (image_latents.shape[:2] == shading_latents.shape[:2] == coeffs.shape[:2]):
            raise ShapeError("reference images, shading, and coeffs misaligned")
        b, m = image_latents.shape[:2]
        if not self.use_latent_injection:
            image_latents = torch.zeros_like(image_latents)
        grid = torch.cat([image_latents, shading_latents], dim=2)  # (B, M, 32, h, w)
        tokens = self.ref_patch_embed(grid.flatten(0, 1))  # (B*M, P, d)
        n_patch = tokens.shape[1]
        tokens = tokens.reshape(b, m, n_patch, self.d_model)
        if self.use_expression:
            tokens = tokens + self.exp_embed_ref(coeffs)[:, :, None, :]
        hp = image_latents.shape[3] // self.patch
        wp = image_latents.shape[4] // self.patch
        tokens = tokens.reshape(b, m * n_patch, self.d_model)
        tokens = tokens + self._pos(m, hp, wp, tokens)
        return tokens + self.segment_embed[self.SEG_REF]

    def driving_coeff_per_latent_frame(self, coeffs: torch.Tensor) -> torch.Tensor:
        """(B, N, exp_dim) -> (B, N/4, exp_dim) per the alignment rule."""
        b, n, d = coeffs.shape
        _check_divisible(n, self.temporal, "N")
        grouped = coeffs.reshape(b, n // self.temporal, self.temporal, d)
        if self.exp_align == "first":
            return grouped[:, :, 0, :]
        return grouped.mean(dim=2)

    def build_driving_tokens(
        self,
        shading_latents: torch.Tensor,  # (B, 16, T, h, w), T = N/4
        coeffs: torch.Tensor,  # (B, N, exp_dim)
    ) -> torch.Tensor:
        b, _, t, h, w = shading_latents.shape
        if coeffs.shape[1] != t * self.temporal:
            raise ShapeError(
                f"expected {t * self.temporal} driving coefficients, got {coeffs.shape[1]}"
            )
        x = shading_latents.permute(0, 2, 1, 3, 4).flatten(0, 1)  # (B*T, 16, h, w)
        tokens = self.drv_patch_embed(x)  # (B*T, P, d)
        n_patch = tokens.shape[1]
        tokens = tokens.reshape(b, t, n_patch, self.d_model)
        if self.use_expression:
            frame_coeffs = self.driving_coeff_per_latent_frame(coeffs)
            tokens = tokens + self.exp_embed_drv(frame_coeffs)[:, :, None, :]
        tokens = tokens.reshape(b, t * n_patch, self.d_model)
        tokens = tokens + self._pos(t, h // self.patch, w // self.patch, tokens)
        return tokens + self.segment_embed[self.SEG_DRV]

    def build_video_tokens(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, 16, N, h, w) -> (B, N/4 * P, d_model)."""
        tokens = self.video_patch_embed(latents)
        t = latents.shape[2] // self.temporal
        hp = latents.shape[3] // self.patch
        wp = latents.shape[4] // self.patch
        tokens = tokens + self._pos(t, hp, wp, tokens)
        return tokens + self.segment_embed[self.SEG_VID]


def assemble_sequence(
    x_ref: torch.Tensor, x_drv: torch.Tensor, x_vid: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenate [reference | driving | video] tokens.

    Returns the full sequence and a boolean mask over positions selecting the
    video tokens (the only denoised positions).
    """
    for name, x in (("x_ref", x_ref), ("x_drv", x_drv), ("x_vid", x_vid)):
        if x.ndim != 3:
            raise ShapeError(f"{name} must be (B, L, d), got {tuple(x.shape)}")
    if x_drv.shape[1] == 0:
        raise ShapeError("driving token block must be non-empty")
    widths = {x_ref.shape[2], x_drv.shape[2], x_vid.shape[2]}
    if len(widths) != 1:
        raise ShapeError(f"token widths differ: {sorted(widths)}")
    seq = torch.cat([x_ref, x_drv, x_vid], dim=1)
    mask = torch.zeros(seq.shape[1], dtype=torch.bool, device=seq.device)
    mask[x_ref.shape[1] + x_drv.shape[1] :] = True
    return seq, mask
