"""Condition encoders and the trainable image autoencoder.

All encoders use x * sigmoid(x) activations between layers and a linear
output layer. Shapes follow the backbone's latent geometry: 16 latent
channels, 8x spatial downsampling, and (for the temporal encoder) 4x
temporal downsampling.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .kinematics import ShapeError

LATENT_CHANNELS = 16
SPATIAL_FACTOR = 8
TEMPORAL_FACTOR = 4


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 3
    latent_channels: int = LATENT_CHANNELS
    spatial_factor: int = SPATIAL_FACTOR
    temporal_factor: int = TEMPORAL_FACTOR
    base_width: int = 32

    def __post_init__(self):
        for name in ("spatial_factor", "temporal_factor"):
            v = getattr(self, name)
            if v < 1 or v & (v - 1):
                raise ValueError(f"{name} must be a power of 2, got {v}")
        # the layer plans below realize exactly 8x spatial / 4x temporal
        if self.spatial_factor != SPATIAL_FACTOR:
            raise ValueError("spatial_factor must be 8")
        if self.temporal_factor != TEMPORAL_FACTOR:
            raise ValueError("temporal_factor must be 4")
        if self.latent_channels != LATENT_CHANNELS:
            raise ValueError("latent_channels must be 16")


def _check_divisible(value: int, factor: int, axis: str):
    if value % factor:
        raise ShapeError(f"{axis}={value} must be divisible by {factor}")


class DrivenShadingEncoder(nn.Module):
    """Seven Conv3D layers: (B,3,F,H,W) -> (B,16,F/4,H/8,W/8)."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        w = cfg.base_width
        self.cfg = cfg
        self.layers = nn.ModuleList(
            [
                nn.Conv3d(cfg.in_channels, w, 3, stride=(1, 2, 2), padding=1),
                nn.Conv3d(w, 2 * w, 3, stride=(2, 2, 2), padding=1),
                nn.Conv3d(2 * w, 4 * w, 3, stride=(2, 2, 2), padding=1),
                nn.Conv3d(4 * w, 4 * w, 3, stride=1, padding=1),
                nn.Conv3d(4 * w, 4 * w, 3, stride=1, padding=1),
                nn.Conv3d(4 * w, 4 * w, 3, stride=1, padding=1),
                nn.Conv3d(4 * w, cfg.latent_channels, 3, stride=1, padding=1),
            ]
        )
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5:
            raise ShapeError(f"expected (B,3,F,H,W), got {tuple(x.shape)}")
        _check_divisible(x.shape[2], self.cfg.temporal_factor, "F")
        _check_divisible(x.shape[3], self.cfg.spatial_factor, "H")
        _check_divisible(x.shape[4], self.cfg.spatial_factor, "W")
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.layers[-1](x)


class ReferenceShadingEncoder(nn.Module):
    """Six Conv2D layers, three with stride 2: (B,3,H,W) -> (B,16,H/8,W/8)."""

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        w = cfg.base_width
        self.cfg = cfg
        self.layers = nn.ModuleList(
            [
                nn.Conv2d(cfg.in_channels, w, 3, stride=2, padding=1),
                nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
                nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
                nn.Conv2d(4 * w, 4 * w, 3, stride=1, padding=1),
                nn.Conv2d(4 * w, 4 * w, 3, stride=1, padding=1),
                nn.Conv2d(4 * w, cfg.latent_channels, 3, stride=1, padding=1),
            ]
        )
        self.act = nn.SiLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected (B,3,H,W), got {tuple(x.shape)}")
        _check_divisible(x.shape[2], self.cfg.spatial_factor, "H")
        _check_divisible(x.shape[3], self.cfg.spatial_factor, "W")
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.layers[-1](x)


class ExpressionEmbed(nn.Module):
    """Single affine map from expression coefficients to token width.

    Instantiated twice (reference and driven roles) with independent weights.
    """

    def __init__(self, exp_dim: int, d_model: int):
        super().__init__()
        self.exp_dim = exp_dim
        self.proj = nn.Linear(exp_dim, d_model)

    def forward(self, coeff: torch.Tensor) -> torch.Tensor:
        if coeff.shape[-1] != self.exp_dim:
            raise ShapeError(
                f"coefficient dim {coeff.shape[-1]} != expected {self.exp_dim}"
            )
        return self.proj(coeff)


class ImageAutoencoder(nn.Module):
    """Small deterministic conv autoencoder: (B,3,H,W) <-> (B,16,H/8,W/8).

    Pre-trained on synthetic frames with a pixel reconstruction loss, then
    frozen during diffusion training.
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig()):
        super().__init__()
        w = cfg.base_width
        self.cfg = cfg
        act = nn.SiLU()
        self.encoder = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            act,
            nn.Conv2d(4 * w, cfg.latent_channels, 3, stride=1, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(cfg.latent_channels, 4 * w, 3, stride=1, padding=1),
            act,
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(4 * w, 2 * w, 3, stride=1, padding=1),
            act,
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, stride=1, padding=1),
            act,
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, cfg.in_channels, 3, stride=1, padding=1),
        )

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4:
            raise ShapeError(f"expected (B,3,H,W), got {tuple(x.shape)}")
        _check_divisible(x.shape[2], self.cfg.spatial_factor, "H")
        _check_divisible(x.shape[3], self.cfg.spatial_factor, "W")
        return self.encoder(x)

    def decode_latent(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.cfg.latent_channels:
            raise ShapeError(
                f"expected (B,{self.cfg.latent_channels},h,w), got {tuple(z.shape)}"
            )
        return self.decoder(z)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode_latent(self.encode_image(x))
