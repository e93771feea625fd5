"""Flow-matching objective and Euler sampler.

The path is the straight line x_t = t*x1 + (1-t)*x0 from Gaussian noise x0
to clean latents x1; the regression target is the constant velocity
v = x1 - x0. Timesteps are logit-normal: t = sigmoid(z), z ~ Normal(mu,
sigma). Inference integrates dx/dt = u(x_t, c, t) from t=0 to t=1 with
uniform Euler steps, starting from seeded noise in the video slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .kinematics import ShapeError
from .model import LiftModel

T_EPS = 1e-6  # keeps sampled timesteps strictly inside (0, 1) in float


class TimestepSampler:
    """Seeded logit-normal timestep sampler."""

    def __init__(self, mu: float = 0.0, sigma: float = 1.0, seed: int = 0):
        self.mu = mu
        self.sigma = sigma
        self.generator = torch.Generator().manual_seed(seed)

    def sample(self, batch_size: int, dtype=torch.float32) -> torch.Tensor:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        z = torch.randn(batch_size, generator=self.generator, dtype=torch.float64)
        t = torch.sigmoid(self.mu + self.sigma * z)
        return t.clamp(T_EPS, 1.0 - T_EPS).to(dtype)

    def state_dict(self) -> dict:
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "generator": self.generator.get_state(),
        }

    def load_state_dict(self, state: dict):
        self.mu = state["mu"]
        self.sigma = state["sigma"]
        self.generator.set_state(state["generator"])


def interpolate(x0: torch.Tensor, x1: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """x_t = t*x1 + (1-t)*x0, with per-sample t broadcast over trailing axes."""
    if x0.shape != x1.shape:
        raise ShapeError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    t = torch.as_tensor(t, dtype=x0.dtype, device=x0.device)
    if t.ndim == 0:
        t = t[None]
    if t.shape[0] != x0.shape[0]:
        raise ShapeError(f"need one timestep per sample, got {t.shape[0]}")
    t = t.reshape(-1, *([1] * (x0.ndim - 1)))
    return t * x1 + (1.0 - t) * x0


@dataclass(frozen=True)
class FlowMatchBatch:
    x0: torch.Tensor
    x1: torch.Tensor
    t: torch.Tensor
    xt: torch.Tensor
    vt: torch.Tensor

    @staticmethod
    def make(x1: torch.Tensor, x0: torch.Tensor, t: torch.Tensor) -> "FlowMatchBatch":
        return FlowMatchBatch(
            x0=x0, x1=x1, t=t, xt=interpolate(x0, x1, t), vt=x1 - x0
        )


def fm_loss(predicted_velocity: torch.Tensor, x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """Mean squared error against the ground-truth velocity x1 - x0.

    Operates on the denoised (video) positions only; the caller passes the
    video-slot tensors.
    """
    for name, x in (("prediction", predicted_velocity), ("x0", x0), ("x1", x1)):
        if not torch.all(torch.isfinite(x)):
            raise ValueError(f"{name} contains non-finite values")
    if predicted_velocity.shape != x0.shape or x0.shape != x1.shape:
        raise ShapeError("prediction / noise / data shapes must match")
    return torch.mean((predicted_velocity - (x1 - x0)) ** 2)


def train_step(
    model: LiftModel,
    batch: dict,
    optimizer: torch.optim.Optimizer,
    timestep_sampler: TimestepSampler,
    noise_generator: torch.Generator,
    grad_clip: float | None = None,
    draws_per_step: int = 1,
) -> float:
    """One flow-matching update.

    ``batch`` carries reference inputs, driving inputs, and the target video
    frames (pixel space): keys ref_images, ref_shading, ref_coeffs,
    drv_shading, drv_coeffs, video. The autoencoder is assumed pre-trained
    and frozen. ``draws_per_step`` > 1 averages the loss over that many
    independent (noise, timestep) draws, batched with shared conditioning,
    before the single optimizer update.
    """
    if "video" not in batch or batch["video"] is None:
        raise ValueError("training requires the target video in the batch")
    if draws_per_step < 1:
        raise ValueError("draws_per_step must be >= 1")
    video = batch["video"]
    with torch.no_grad():
        x1 = model.encode_video(video)
    k = draws_per_step
    if k > 1:
        x1 = x1.expand(k * x1.shape[0], *x1.shape[1:])
    x0 = torch.randn(x1.shape, generator=noise_generator, dtype=x1.dtype)
    t = timestep_sampler.sample(x1.shape[0], dtype=x1.dtype)
    xt = interpolate(x0, x1, t)

    def rep(v: torch.Tensor) -> torch.Tensor:
        return v.expand(k * v.shape[0], *v.shape[1:]) if k > 1 else v

    pred = model(
        rep(batch["ref_images"]),
        rep(batch["ref_shading"]),
        rep(batch["ref_coeffs"]),
        rep(batch["drv_shading"]),
        rep(batch["drv_coeffs"]),
        xt,
        t,
    )
    loss = fm_loss(pred, x0, x1)
    optimizer.zero_grad()
    loss.backward()
    if grad_clip is not None:
        params = [p for g in optimizer.param_groups for p in g["params"]]
        torch.nn.utils.clip_grad_norm_(params, grad_clip)
    optimizer.step()
    return float(loss.detach())


@torch.no_grad()
def sample_video(
    model: LiftModel,
    ref_images: torch.Tensor,
    ref_shading: torch.Tensor,
    ref_coeffs: torch.Tensor,
    drv_shading: torch.Tensor,
    drv_coeffs: torch.Tensor,
    steps: int = 32,
    seed: int = 0,
    velocity_fn=None,
) -> torch.Tensor:
    """Generate video frames for a driving sequence (no target video).

    Video latents start as seeded Gaussian noise and are integrated with
    uniform Euler steps; each step evaluates the velocity at the interval
    midpoint time. Returns decoded frames (B, 3, N, H, W) clamped to [0, 1].
    ``velocity_fn`` overrides the model's velocity (used by oracles).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    b = ref_images.shape[0]
    n = drv_shading.shape[2]
    h = drv_shading.shape[3] // model.cfg.enc.spatial_factor
    w = drv_shading.shape[4] // model.cfg.enc.spatial_factor
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(b, model.cfg.enc.latent_channels, n, h, w, generator=gen)

    dt = 1.0 / steps
    for i in range(steps):
        t = torch.full((b,), (i + 0.5) * dt, dtype=x.dtype)
        if velocity_fn is not None:
            v = velocity_fn(x, t)
        else:
            v = model(
                ref_images, ref_shading, ref_coeffs, drv_shading, drv_coeffs, x, t
            )
        x = x + dt * v
    return model.decode_video(x).clamp(0.0, 1.0)
