"""Trend studies: expression-coefficient injection, reference count, and
trajectory richness. Each axis trains small fixed-seed variants on the
synthetic world and reports a toy-scale PSNR table; seeds are held fixed
across the variants of an axis so rows are comparable.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .config import RunConfig
from .kinematics import ExpressionTrajectory, select_references
from .metrics import frame_metrics
from .synthworld import sample_trajectory, synth_sequence
from .train import (
    Trainer,
    TrainingData,
    build_world,
    lift_frames,
    reference_inputs,
    synthesize_world,
)

AXES = ("exp-injection", "ref-count", "richness")
REF_COUNTS = (1, 2, 3, 5)
RICHNESS_LEVELS = (1, 2, 5)


def toy_config(seed: int = 0) -> RunConfig:
    """A configuration small enough to train in about a minute on CPU while
    still exhibiting the qualitative trends."""
    cfg = RunConfig()
    cfg.seeds.world = seed
    cfg.seeds.init = seed + 40
    cfg.seeds.train_noise = seed + 50
    cfg.seeds.timestep = seed + 60
    cfg.world.resolution = 32
    cfg.world.v_count = 120
    cfg.world.exp_dim = 12
    cfg.world.n_trajectories = 4
    cfg.world.trajectory_length = 8
    cfg.world.richness = 3
    cfg.d_model = 96
    cfg.n_layers = 3
    cfg.n_heads = 4
    cfg.train.ae_steps = 400
    cfg.train.warmup_steps = 50
    cfg.train.lr_decay_steps = 600
    cfg.train.diffusion_steps = 600
    cfg.flow.sample_steps = 16
    return cfg


def train_variant(cfg: RunConfig, out_dir, steps: int | None = None):
    """Synthesize the world for ``cfg``, run both training stages, and return
    (trainer, data, world) for evaluation."""
    proxy, camera, material, trajectories, sequences = synthesize_world(cfg)
    data = TrainingData.from_sequences(trajectories, sequences)
    trainer = Trainer(cfg, data, out_dir)
    trainer.pretrain_autoencoder()
    trainer.train(steps or cfg.train.diffusion_steps, checkpoint_every=0)
    return trainer, data, (proxy, camera, material, trajectories)


def heldout_driving(cfg: RunConfig, world, richness: int | None = None,
                    mode_scale: float | None = None):
    """A driving trajectory not seen in training (disjoint seed stream)."""
    proxy, camera, material, _ = world
    traj = sample_trajectory(
        seed=cfg.seeds.world * 1000 + 777,
        length=cfg.world.trajectory_length,
        richness=richness or cfg.world.richness,
        d_exp=cfg.world.exp_dim,
        mode_scale=mode_scale or cfg.world.mode_scale,
    )
    seq = synth_sequence(proxy, traj, camera, material)
    shading = np.stack([b.shading for b in seq])
    target = np.stack([b.appearance for b in seq])
    return traj, shading, target


def eval_lift_psnr(trainer: Trainer, data: TrainingData, shading, coeffs,
                   target, n_refs: int) -> float:
    """Lift a driving sequence using K-means references from sequence 0 and
    score against oracle renders."""
    traj = ExpressionTrajectory(coeffs=data.coeffs[0])
    idx = select_references(traj, n_refs, seed=trainer.cfg.seeds.kmeans)
    refs = reference_inputs(data, 0, idx)
    out = lift_frames(
        trainer.model, refs, shading, coeffs,
        steps=trainer.cfg.flow.sample_steps, seed=trainer.cfg.seeds.infer_noise,
    )
    return frame_metrics(out, target)["mean_psnr"]


def _variant_psnr(cfg: RunConfig, out_dir, steps=None, n_refs=None,
                  driving_richness=None, driving_mode_scale=None):
    trainer, data, world = train_variant(cfg, out_dir, steps=steps)
    traj, shading, target = heldout_driving(
        cfg, world, richness=driving_richness, mode_scale=driving_mode_scale
    )
    return eval_lift_psnr(
        trainer, data, shading, traj.coeffs, target,
        n_refs or cfg.n_references,
    ), (trainer, data, world)


def ablate_exp_injection(out_dir, seeds=(0, 1, 2), steps=None,
                         base_config=None) -> dict:
    """Two rows: with and without expression-coefficient injection."""
    rows = []
    for use_exp in (True, False):
        per_seed = []
        for seed in seeds:
            cfg = base_config(seed) if base_config else toy_config(seed)
            cfg.use_expression = use_exp
            run_dir = Path(out_dir) / f"exp{int(use_exp)}_seed{seed}"
            psnr, _ = _variant_psnr(cfg, run_dir, steps=steps)
            per_seed.append(psnr)
        rows.append(
            {
                "variant": "with-expression" if use_exp else "without-expression",
                "per_seed_psnr": per_seed,
                "mean_psnr": float(np.mean(per_seed)),
            }
        )
    gap = rows[0]["mean_psnr"] - rows[1]["mean_psnr"]
    return {"axis": "exp-injection", "rows": rows, "gap_db": gap,
            "seeds": list(seeds)}


def ablate_ref_count(out_dir, seeds=(0, 1, 2), counts=REF_COUNTS,
                     steps=None, base_config=None) -> dict:
    """One row per reference count; a single model per seed (trained at the
    largest count) is evaluated with each reference budget."""
    per_count = {m: [] for m in counts}
    for seed in seeds:
        cfg = base_config(seed) if base_config else toy_config(seed)
        cfg.n_references = max(counts)
        run_dir = Path(out_dir) / f"refs_seed{seed}"
        trainer, data, world = train_variant(cfg, run_dir, steps=steps)
        traj, shading, target = heldout_driving(cfg, world)
        for m in counts:
            per_count[m].append(
                eval_lift_psnr(trainer, data, shading, traj.coeffs, target, m)
            )
    rows = [
        {
            "variant": f"M={m}",
            "n_references": m,
            "per_seed_psnr": per_count[m],
            "mean_psnr": float(np.mean(per_count[m])),
        }
        for m in counts
    ]
    return {"axis": "ref-count", "rows": rows, "seeds": list(seeds)}


def ablate_richness(out_dir, seeds=(0,), levels=RICHNESS_LEVELS,
                    steps=None, base_config=None) -> dict:
    """One row per training-trajectory richness; evaluation drives with
    held-out extreme expressions (full-richness, amplified modes)."""
    rows = []
    for level in levels:
        per_seed = []
        for seed in seeds:
            cfg = base_config(seed) if base_config else toy_config(seed)
            cfg.world.richness = level
            run_dir = Path(out_dir) / f"rich{level}_seed{seed}"
            psnr, _ = _variant_psnr(
                cfg, run_dir, steps=steps,
                driving_richness=max(levels), driving_mode_scale=1.3,
            )
            per_seed.append(psnr)
        rows.append(
            {
                "variant": f"richness={level}",
                "richness": level,
                "per_seed_psnr": per_seed,
                "mean_psnr": float(np.mean(per_seed)),
            }
        )
    return {"axis": "richness", "rows": rows, "seeds": list(seeds)}


def run_ablation(axis: str, out_dir, seeds=None, steps=None,
                 base_config=None) -> dict:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if axis == "exp-injection":
        report = ablate_exp_injection(out_dir, seeds=seeds or (0, 1, 2),
                                      steps=steps, base_config=base_config)
    elif axis == "ref-count":
        report = ablate_ref_count(out_dir, seeds=seeds or (0, 1, 2),
                                  steps=steps, base_config=base_config)
    else:
        report = ablate_richness(out_dir, seeds=seeds or (0,),
                                 steps=steps, base_config=base_config)
    with open(out_dir / "report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    return report


def format_table(report: dict) -> str:
    lines = [f"axis: {report['axis']}  seeds: {report['seeds']}"]
    width = max(len(r["variant"]) for r in report["rows"])
    for row in report["rows"]:
        per_seed = "  ".join(f"{p:6.2f}" for p in row["per_seed_psnr"])
        lines.append(
            f"  {row['variant']:<{width}}  mean {row['mean_psnr']:6.2f} dB"
            f"  [{per_seed}]"
        )
    if "gap_db" in report:
        lines.append(f"  gap: {report['gap_db']:+.3f} dB")
    return "\n".join(lines)
