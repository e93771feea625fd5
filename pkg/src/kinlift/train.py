"""Two-stage training loop: autoencoder pre-train, then flow-matching
diffusion with the autoencoder frozen. Deterministic and resumable: RNG
streams live in the checkpoint, so a resumed run continues the exact
trajectory of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import RunConfig
from .flowmatch import TimestepSampler, sample_video, train_step
from .kinematics import ExpressionTrajectory, select_references
from .model import LiftModel
from .synthworld import (
    Camera,
    HeadProxy,
    LoadedDataset,
    PhongMaterial,
    make_head_proxy,
    sample_trajectory,
    synth_dataset,
)


def build_world(cfg: RunConfig):
    """Proxy, camera, material, and trajectories for a run config."""
    w = cfg.world
    proxy = make_head_proxy(
        w.identity_seed,
        v_count=w.v_count,
        d_exp=w.exp_dim,
        basis_amplitude=w.basis_amplitude,
    )
    camera = Camera(height=w.resolution, width=w.resolution,
                    focal_px=1.25 * w.resolution)
    material = PhongMaterial()
    trajectories = [
        sample_trajectory(
            seed=cfg.seeds.world * 1000 + i,
            length=w.trajectory_length,
            richness=w.richness,
            d_exp=w.exp_dim,
            mode_scale=w.mode_scale,
        )
        for i in range(w.n_trajectories)
    ]
    return proxy, camera, material, trajectories


def synthesize_world(cfg: RunConfig):
    proxy, camera, material, trajectories = build_world(cfg)
    sequences = synth_dataset(proxy, trajectories, camera, material)
    return proxy, camera, material, trajectories, sequences


@dataclass
class TrainingData:
    """In-memory aligned training sequences."""

    appearance: list[np.ndarray]  # per sequence (N, H, W, 3)
    shading: list[np.ndarray]
    coeffs: list[np.ndarray]  # per sequence (N, D)

    @staticmethod
    def from_sequences(trajectories, sequences) -> "TrainingData":
        return TrainingData(
            appearance=[np.stack([b.appearance for b in s]) for s in sequences],
            shading=[np.stack([b.shading for b in s]) for s in sequences],
            coeffs=[t.coeffs.copy() for t in trajectories],
        )

    @staticmethod
    def from_dataset(ds: LoadedDataset) -> "TrainingData":
        return TrainingData(
            appearance=list(ds.appearance),
            shading=list(ds.shading),
            coeffs=[t.coeffs.copy() for t in ds.trajectories],
        )

    @property
    def n_sequences(self) -> int:
        return len(self.appearance)


def _img_to_tensor(stack: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) float -> (3, N, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(stack)).permute(3, 0, 1, 2).float()


def reference_inputs(data: TrainingData, seq: int, indices) -> dict:
    """Reference tensors (batch axis 1) for the given frames of a sequence."""
    idx = list(indices)
    return {
        "ref_images": torch.stack(
            [_img_to_tensor(data.appearance[seq][i : i + 1])[:, 0] for i in idx]
        )[None],
        "ref_shading": torch.stack(
            [_img_to_tensor(data.shading[seq][i : i + 1])[:, 0] for i in idx]
        )[None],
        "ref_coeffs": torch.from_numpy(data.coeffs[seq][idx]).float()[None],
    }


def training_batch(
    data: TrainingData, seq: int, n_refs: int, kmeans_seed: int
) -> dict:
    """Batch for one sequence: driving + target from ``seq``, references
    selected by K-means from a different trajectory of the same identity
    (wraps to the same sequence when only one exists)."""
    ref_seq = (seq + 1) % data.n_sequences
    traj = ExpressionTrajectory(coeffs=data.coeffs[ref_seq])
    idx = select_references(traj, n_refs, seed=kmeans_seed)
    batch = reference_inputs(data, ref_seq, idx)
    batch["drv_shading"] = _img_to_tensor(data.shading[seq])[None]
    batch["drv_coeffs"] = torch.from_numpy(data.coeffs[seq]).float()[None]
    batch["video"] = _img_to_tensor(data.appearance[seq])[None]
    return batch


class Trainer:
    def __init__(self, cfg: RunConfig, data: TrainingData, out_dir):
        self.cfg = cfg
        self.data = data
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.metrics_path = self.out_dir / "metrics.jsonl"
        self.step = 0

        torch.manual_seed(cfg.seeds.init)
        self.model = LiftModel(cfg.model_config())
        self.model.attach_adapters(
            seed=cfg.seeds.init, freeze_base=cfg.train.freeze_backbone_base
        )
        self.timestep_sampler = TimestepSampler(
            mu=cfg.flow.mu, sigma=cfg.flow.sigma, seed=cfg.seeds.timestep
        )
        self.noise_gen = torch.Generator().manual_seed(cfg.seeds.train_noise)
        self.optimizer: torch.optim.Optimizer | None = None
        self._batches = [
            training_batch(data, i, cfg.n_references, cfg.seeds.kmeans)
            for i in range(data.n_sequences)
        ]

    # -- stage 1: autoencoder ------------------------------------------------

    def pretrain_autoencoder(self) -> float:
        """Overfit the autoencoder on all appearance frames; returns the
        final per-pixel MAE. Freezes the autoencoder afterwards."""
        cfg = self.cfg.train
        frames = torch.cat(
            [_img_to_tensor(a).permute(1, 0, 2, 3) for a in self.data.appearance]
        )  # (total_frames, 3, H, W)
        gen = torch.Generator().manual_seed(self.cfg.seeds.train_noise + 101)
        opt = torch.optim.AdamW(self.model.autoencoder.parameters(), lr=cfg.ae_lr)
        for _ in range(cfg.ae_steps):
            pick = torch.randint(0, frames.shape[0], (cfg.ae_batch,), generator=gen)
            x = frames[pick]
            recon = self.model.autoencoder(x)
            loss = torch.mean((recon - x) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            mae = float(torch.mean(torch.abs(self.model.autoencoder(frames) - frames)))
            z = self.model.autoencoder.encode_image(frames)
            self.model.latent_scale.fill_(float(z.std()))
        self.model.freeze_autoencoder()
        return mae

    # -- stage 2: diffusion ---------------------------------------------------

    def _ensure_optimizer(self):
        if self.optimizer is None:
            self.optimizer = torch.optim.AdamW(
                self.model.parameter_groups(
                    self.cfg.train.lr_new, self.cfg.train.lr_adapter
                ),
                weight_decay=self.cfg.train.weight_decay,
            )
            for group in self.optimizer.param_groups:
                group["base_lr"] = group["lr"]

    def _set_lr(self):
        """Linear warmup, then optional cosine decay; a pure function of the
        step counter so resumed runs follow the same schedule."""
        tc = self.cfg.train
        warmup = max(tc.warmup_steps, 1)
        factor = min(1.0, (self.step + 1) / warmup)
        if tc.lr_decay_steps > warmup and self.step + 1 > warmup:
            progress = min(1.0, (self.step + 1 - warmup) / (tc.lr_decay_steps - warmup))
            lo = tc.lr_min_factor
            factor *= lo + (1.0 - lo) * 0.5 * (1.0 + math.cos(math.pi * progress))
        for group in self.optimizer.param_groups:
            group["lr"] = group["base_lr"] * factor

    def train(self, steps: int, checkpoint_every: int | None = None) -> list[dict]:
        self._ensure_optimizer()
        if checkpoint_every is None:
            checkpoint_every = self.cfg.train.checkpoint_every
        records = []
        for _ in range(steps):
            batch = self._batches[self.step % len(self._batches)]
            t0 = time.perf_counter()
            self._set_lr()
            loss = train_step(
                self.model,
                batch,
                self.optimizer,
                self.timestep_sampler,
                self.noise_gen,
                grad_clip=self.cfg.train.grad_clip,
                draws_per_step=self.cfg.train.draws_per_step,
            )
            self.step += 1
            rec = {
                "step": self.step,
                "loss": loss,
                "lr_new": self.optimizer.param_groups[0]["lr"],
                "lr_adapter": (
                    self.optimizer.param_groups[1]["lr"]
                    if len(self.optimizer.param_groups) > 1
                    else None
                ),
                "wall_time": time.perf_counter() - t0,
            }
            records.append(rec)
            with open(self.metrics_path, "a") as fh:
                fh.write(json.dumps(rec) + "\n")
            if checkpoint_every and self.step % checkpoint_every == 0:
                self.save(self.out_dir / f"ckpt_step{self.step:06d}.pt")
        self.save(self.out_dir / "ckpt_latest.pt")
        return records

    # -- persistence ----------------------------------------------------------

    def save(self, path):
        self._ensure_optimizer()
        ckpt.save_checkpoint(
            path,
            self.model,
            step=self.step,
            run_config=self.cfg.to_dict(),
            adapters_attached=self.cfg.adapter_rank > 0,
            adapter_seed=self.cfg.seeds.init,
            optimizer=self.optimizer,
            rng_states={
                "noise": self.noise_gen.get_state(),
                "timestep": self.timestep_sampler.state_dict(),
            },
        )

    @classmethod
    def resume(cls, data: TrainingData, ckpt_path, out_dir=None) -> "Trainer":
        payload = ckpt.load_checkpoint(ckpt_path)
        cfg = RunConfig.from_dict(payload["run_config"])
        trainer = cls(cfg, data, out_dir or Path(ckpt_path).parent)
        trainer.model = ckpt.restore_model(payload)
        trainer.step = payload["step"]
        trainer._ensure_optimizer()
        if payload["optimizer_state"] is not None:
            trainer.optimizer.load_state_dict(payload["optimizer_state"])
        trainer.noise_gen.set_state(payload["rng_states"]["noise"])
        trainer.timestep_sampler.load_state_dict(payload["rng_states"]["timestep"])
        return trainer


# ---------------------------------------------------------------------------
# inference harness


def lift_frames(
    model: LiftModel,
    refs: dict,
    drv_shading: np.ndarray,  # (N, H, W, 3)
    drv_coeffs: np.ndarray,  # (N, D)
    steps: int,
    seed: int,
) -> np.ndarray:
    """Generate frames for a driving sequence; returns (N, H, W, 3) in [0,1]."""
    model.eval()
    out = sample_video(
        model,
        refs["ref_images"],
        refs["ref_shading"],
        refs["ref_coeffs"],
        _img_to_tensor(drv_shading)[None],
        torch.from_numpy(np.ascontiguousarray(drv_coeffs)).float()[None],
        steps=steps,
        seed=seed,
    )
    return out[0].permute(1, 2, 3, 0).numpy().astype(np.float64)


def render_driving(proxy: HeadProxy, trajectory: ExpressionTrajectory,
                   camera: Camera, material: PhongMaterial):
    """Oracle-render a trajectory: (shading stack, appearance stack)."""
    from .synthworld import synth_sequence

    seq = synth_sequence(proxy, trajectory, camera, material)
    return (
        np.stack([b.shading for b in seq]),
        np.stack([b.appearance for b in seq]),
    )
