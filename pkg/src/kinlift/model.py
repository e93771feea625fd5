"""Full lifting model: encoders + conditioner + transformer backbone."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

from .backbone import BackboneConfig, DiT, adapter_parameters, attach_adapters
from .conditioning import Conditioner, IdentityContextEncoder, assemble_sequence
from .encoders import (
    DrivenShadingEncoder,
    EncoderConfig,
    ImageAutoencoder,
    ReferenceShadingEncoder,
)


@dataclass(frozen=True)
class ModelConfig:
    exp_dim: int = 100
    enc: EncoderConfig = field(default_factory=EncoderConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    identity_width: int = 16
    use_expression: bool = True
    use_latent_injection: bool = True
    use_identity_context: bool = True
    exp_align: str = "first"

    def to_dict(self) -> dict:
        return {
            "exp_dim": self.exp_dim,
            "enc": vars(self.enc).copy(),
            "backbone": vars(self.backbone).copy(),
            "identity_width": self.identity_width,
            "use_expression": self.use_expression,
            "use_latent_injection": self.use_latent_injection,
            "use_identity_context": self.use_identity_context,
            "exp_align": self.exp_align,
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        return ModelConfig(
            exp_dim=d["exp_dim"],
            enc=EncoderConfig(**d["enc"]),
            backbone=BackboneConfig(**d["backbone"]),
            identity_width=d["identity_width"],
            use_expression=d["use_expression"],
            use_latent_injection=d["use_latent_injection"],
            use_identity_context=d["use_identity_context"],
            exp_align=d["exp_align"],
        )


class LiftModel(nn.Module):
    """Predicts the flow velocity of video latents given reference and
    driving conditioning."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.autoencoder = ImageAutoencoder(cfg.enc)
        self.ref_shading_enc = ReferenceShadingEncoder(cfg.enc)
        self.drv_shading_enc = DrivenShadingEncoder(cfg.enc)
        self.conditioner = Conditioner(
            d_model=cfg.backbone.d_model,
            exp_dim=cfg.exp_dim,
            patch=cfg.backbone.patch,
            enc_cfg=cfg.enc,
            use_expression=cfg.use_expression,
            use_latent_injection=cfg.use_latent_injection,
            exp_align=cfg.exp_align,
        )
        self.identity_encoder = IdentityContextEncoder(
            cfg.backbone.d_ctx, base_width=cfg.identity_width
        )
        self.null_context = nn.Parameter(torch.zeros(1, 1, cfg.backbone.d_ctx))
        self.dit = DiT(cfg.backbone)
        # set after autoencoder pre-training so video latents are unit-scale
        self.register_buffer("latent_scale", torch.ones(()))

    # -- conditioning -------------------------------------------------------

    def encode_video(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, 3, N, H, W) pixel video -> (B, 16, N, h, w) per-frame latents."""
        b, c, n, h, w = frames.shape
        flat = frames.permute(0, 2, 1, 3, 4).reshape(b * n, c, h, w)
        z = self.autoencoder.encode_image(flat) / self.latent_scale
        return z.reshape(b, n, *z.shape[1:]).permute(0, 2, 1, 3, 4)

    def decode_video(self, latents: torch.Tensor) -> torch.Tensor:
        """(B, 16, N, h, w) -> (B, 3, N, H, W), decoded per latent frame."""
        b, c, n, h, w = latents.shape
        flat = latents.permute(0, 2, 1, 3, 4).reshape(b * n, c, h, w)
        x = self.autoencoder.decode_latent(flat * self.latent_scale)
        return x.reshape(b, n, *x.shape[1:]).permute(0, 2, 1, 3, 4)

    def identity_context(self, ref_images: torch.Tensor) -> torch.Tensor:
        if self.cfg.use_identity_context:
            return self.identity_encoder(ref_images)
        return self.null_context.expand(ref_images.shape[0], 1, -1)

    def build_tokens(
        self,
        ref_images: torch.Tensor,  # (B, M, 3, H, W)
        ref_shading: torch.Tensor,  # (B, M, 3, H, W)
        ref_coeffs: torch.Tensor,  # (B, M, exp_dim)
        drv_shading: torch.Tensor,  # (B, 3, N, H, W)
        drv_coeffs: torch.Tensor,  # (B, N, exp_dim)
        video_latents: torch.Tensor,  # (B, 16, N, h, w)
    ):
        b, m = ref_images.shape[:2]
        img_lat = self.autoencoder.encode_image(ref_images.flatten(0, 1))
        img_lat = img_lat.reshape(b, m, *img_lat.shape[1:])
        shd_lat = self.ref_shading_enc(ref_shading.flatten(0, 1))
        shd_lat = shd_lat.reshape(b, m, *shd_lat.shape[1:])
        x_ref = self.conditioner.build_reference_tokens(img_lat, shd_lat, ref_coeffs)
        drv_lat = self.drv_shading_enc(drv_shading)
        x_drv = self.conditioner.build_driving_tokens(drv_lat, drv_coeffs)
        x_vid = self.conditioner.build_video_tokens(video_latents)
        return assemble_sequence(x_ref, x_drv, x_vid)

    # -- velocity prediction ------------------------------------------------

    def forward(
        self,
        ref_images: torch.Tensor,
        ref_shading: torch.Tensor,
        ref_coeffs: torch.Tensor,
        drv_shading: torch.Tensor,
        drv_coeffs: torch.Tensor,
        video_latents: torch.Tensor,
        t: torch.Tensor,
    ) -> torch.Tensor:
        """Predicted velocity with the shape of ``video_latents``."""
        tokens, mask = self.build_tokens(
            ref_images, ref_shading, ref_coeffs, drv_shading, drv_coeffs, video_latents
        )
        ctx = self.identity_context(ref_images)
        _, _, n, h, w = video_latents.shape
        return self.dit.predict_velocity(tokens, t, ctx, mask, n, h, w)

    # -- optimization groups -------------------------------------------------

    def attach_adapters(self, seed: int = 0, freeze_base: bool = False):
        cfg = self.cfg.backbone
        if cfg.adapter_rank > 0:
            attach_adapters(
                self.dit,
                rank=cfg.adapter_rank,
                scale=cfg.adapter_scale,
                seed=seed,
                freeze_base=freeze_base,
            )
        return self

    def parameter_groups(self, lr_new: float, lr_adapter: float):
        """Two-rate scheme: newly trained modules vs low-rank adapters.

        The autoencoder is excluded (pre-trained separately, then frozen).
        """
        adapter = list(adapter_parameters(self.dit))
        adapter_ids = set(id(p) for p in adapter)
        ae_ids = set(id(p) for p in self.autoencoder.parameters())
        new = [
            p
            for p in self.parameters()
            if id(p) not in adapter_ids and id(p) not in ae_ids and p.requires_grad
        ]
        groups = [{"params": new, "lr": lr_new, "name": "new"}]
        if adapter:
            groups.append({"params": adapter, "lr": lr_adapter, "name": "adapter"})
        return groups

    def freeze_autoencoder(self):
        for p in self.autoencoder.parameters():
            p.requires_grad_(False)
        return self
