"""Command-line entry points.

All commands write their outputs under a run directory containing a
``run.meta`` provenance file (command, arguments, resolved configuration,
library version). Configuration comes from an optional YAML file plus
KINLIFT_* environment overrides (double underscores nest, e.g.
KINLIFT_TRAIN__LR_NEW=1e-3). Errors exit nonzero after printing a single
machine-parsable line: ``error code=<code> message="..."``.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .ablate import format_table, run_ablation
from .checkpoint import CheckpointError, load_checkpoint, restore_model
from .config import ENV_PREFIX, RunConfig, load_config
from .kinematics import (
    ExpressionTrajectory,
    ShapeError,
    coverage_stats,
    format_report,
    load_trajectory_csv,
    select_references,
)
from .metrics import frame_metrics
from .synthworld import (
    load_dataset,
    load_image,
    save_image,
    synth_dataset,
    write_dataset,
)
from .train import (
    Trainer,
    TrainingData,
    build_world,
    lift_frames,
    reference_inputs,
    render_driving,
    synthesize_world,
)


def _fail(code: str, message: str):
    click.echo(f'error code={code} message="{message}"', err=True)
    sys.exit(1)


def cli_errors(fn):
    """Map exceptions to single-line machine-parsable errors."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ShapeError as e:
            _fail("shape-error", str(e))
        except CheckpointError as e:
            _fail("checkpoint-error", str(e))
        except FileNotFoundError as e:
            _fail("not-found", str(e))
        except (ValueError, KeyError) as e:
            _fail("invalid-argument", str(e))
        except OSError as e:
            _fail("io-error", str(e))

    return wrapper


def write_run_meta(out_dir: Path, command: str, cfg: RunConfig | None,
                   **extra):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "env_prefix": ENV_PREFIX,
    }
    meta.update(extra)
    with open(out_dir / "run.meta", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _load_cfg(config_path, seed=None) -> RunConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg.seeds.world = seed
    return cfg


@click.group()
def main():
    """Expression-conditioned video generation against a synthetic head
    proxy: data synthesis, reference selection, training, lifting, and
    evaluation."""


@main.command("synth-data")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="World seed override.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Run directory for the dataset.")
@cli_errors
def cmd_synth_data(config_path, seed, out_dir):
    """Render a synthetic dataset (frames, shading maps, coefficient CSVs)."""
    cfg = _load_cfg(config_path, seed)
    proxy, camera, material, trajectories, sequences = synthesize_world(cfg)
    ds_dir = Path(out_dir) / "dataset"
    write_dataset(ds_dir, proxy, trajectories, sequences, camera, material)
    write_run_meta(Path(out_dir), "synth-data", cfg, dataset=str(ds_dir))
    n_frames = sum(len(s) for s in sequences)
    click.echo(f"wrote {n_frames} frames over {len(sequences)} sequences to {ds_dir}")


@main.command("select-refs")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("-k", "--k", type=int, default=5, help="Number of references.")
@click.option("--seed", type=int, default=5, help="Clustering seed.")
@click.option("--sequence", type=int, default=0, help="Sequence index.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@cli_errors
def cmd_select_refs(dataset, k, seed, sequence, out_dir):
    """Pick reference frames by K-means over expression coefficients."""
    ds = load_dataset(dataset)
    if sequence >= len(ds.trajectories):
        raise ValueError(
            f"sequence {sequence} out of range ({len(ds.trajectories)} available)"
        )
    traj = ds.trajectories[sequence]
    if k > traj.coeffs.shape[0]:
        raise ValueError(
            f"k={k} exceeds the {traj.coeffs.shape[0]} frames in the sequence"
        )
    indices = select_references(traj, k, seed=seed)
    stats = coverage_stats(traj, indices)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "dataset": str(Path(dataset).resolve()),
        "sequence": sequence,
        "k": k,
        "seed": seed,
        "indices": [int(i) for i in indices],
        "coverage": stats,
    }
    with open(out_dir / "references.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    write_run_meta(out_dir, "select-refs", None, manifest="references.json")
    click.echo(f"selected frames: {manifest['indices']}")
    click.echo(format_report(stats), nl=False)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--data", "data_dir", type=click.Path(exists=True), default=None,
              help="Dataset directory (defaults to synthesizing in memory).")
@click.option("--steps", type=int, default=None,
              help="Diffusion steps (defaults to config).")
@click.option("--seed", type=int, default=None, help="World seed override.")
@click.option("--resume", "resume_path", type=click.Path(exists=True),
              default=None, help="Checkpoint to resume from.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@cli_errors
def cmd_train(config_path, data_dir, steps, seed, resume_path, out_dir):
    """Two-stage training: autoencoder pre-train, then flow matching."""
    if resume_path:
        if data_dir:
            data = TrainingData.from_dataset(load_dataset(data_dir))
        else:
            payload = load_checkpoint(resume_path)
            cfg = RunConfig.from_dict(payload["run_config"])
            _, _, _, trajectories, sequences = synthesize_world(cfg)
            data = TrainingData.from_sequences(trajectories, sequences)
        trainer = Trainer.resume(data, resume_path, out_dir)
        cfg = trainer.cfg
    else:
        cfg = _load_cfg(config_path, seed)
        if data_dir:
            data = TrainingData.from_dataset(load_dataset(data_dir))
        else:
            _, _, _, trajectories, sequences = synthesize_world(cfg)
            data = TrainingData.from_sequences(trajectories, sequences)
        trainer = Trainer(cfg, data, out_dir)
        mae = trainer.pretrain_autoencoder()
        click.echo(f"autoencoder pre-train MAE {mae:.4f}")
    write_run_meta(Path(out_dir), "train", cfg, resumed_from=resume_path)
    records = trainer.train(steps if steps is not None else cfg.train.diffusion_steps)
    click.echo(
        f"trained to step {trainer.step}; final loss {records[-1]['loss']:.4f};"
        f" checkpoints in {out_dir}"
    )


@main.command("lift")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True))
@click.option("--trajectory", "trajectory_csv", type=click.Path(exists=True),
              default=None,
              help="Driving coefficients CSV; shading is rendered on demand.")
@click.option("--refs", "refs_path", type=click.Path(exists=True), default=None,
              help="Reference manifest from select-refs (defaults to K-means "
                   "over the checkpoint's first training sequence).")
@click.option("--steps", type=int, default=None, help="Euler steps.")
@click.option("--seed", type=int, default=None, help="Sampling noise seed.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@cli_errors
def cmd_lift(ckpt_path, trajectory_csv, refs_path, steps, seed, out_dir):
    """Generate frames for a driving trajectory from a trained checkpoint."""
    payload = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_dict(payload["run_config"])
    model = restore_model(payload)
    proxy, camera, material, trajectories = build_world(cfg)

    if trajectory_csv:
        traj = load_trajectory_csv(trajectory_csv)
        if traj.coeffs.shape[1] != cfg.world.exp_dim:
            raise ShapeError(
                f"driving coefficients have {traj.coeffs.shape[1]} dims, "
                f"world expects {cfg.world.exp_dim}"
            )
    else:
        traj = trajectories[0]
    drv_shading, _ = render_driving(proxy, traj, camera, material)

    if refs_path:
        with open(refs_path) as fh:
            manifest = json.load(fh)
        ds = load_dataset(manifest["dataset"])
        data = TrainingData.from_dataset(ds)
        refs = reference_inputs(data, manifest["sequence"], manifest["indices"])
    else:
        ref_traj = trajectories[0]
        ref_shading, ref_appearance = render_driving(proxy, ref_traj, camera, material)
        data = TrainingData(
            appearance=[ref_appearance], shading=[ref_shading],
            coeffs=[ref_traj.coeffs],
        )
        idx = select_references(ref_traj, cfg.n_references, seed=cfg.seeds.kmeans)
        refs = reference_inputs(data, 0, idx)

    frames = lift_frames(
        model, refs, drv_shading, traj.coeffs,
        steps=steps if steps is not None else cfg.flow.sample_steps,
        seed=seed if seed is not None else cfg.seeds.infer_noise,
    )
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, frame in enumerate(frames):
        name = f"frame{i:04d}.png"
        save_image(frames_dir / name, frame)
        names.append(name)
    with open(out_dir / "frames.json", "w") as fh:
        json.dump({"frames": names, "count": len(names)}, fh, indent=2)
    write_run_meta(out_dir, "lift", cfg, checkpoint=str(ckpt_path),
                   n_frames=len(names))
    click.echo(f"wrote {len(names)} frames to {frames_dir}")


@main.command("eval")
@click.argument("generated", type=click.Path(exists=True))
@click.argument("reference", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default=None)
@cli_errors
def cmd_eval(generated, reference, out_dir):
    """PSNR/SSIM between two aligned directories of PNG frames."""
    gen_files = sorted(Path(generated).glob("*.png"))
    ref_files = sorted(Path(reference).glob("*.png"))
    if not gen_files:
        raise ValueError(f"no PNG frames in {generated}")
    if len(gen_files) != len(ref_files):
        raise ValueError(
            f"frame count mismatch: {len(gen_files)} generated vs "
            f"{len(ref_files)} reference"
        )
    gen = np.stack([load_image(p) for p in gen_files]) / 255.0
    ref = np.stack([load_image(p) for p in ref_files]) / 255.0
    if gen.shape != ref.shape:
        raise ValueError(f"resolution mismatch: {gen.shape} vs {ref.shape}")
    report = frame_metrics(gen, ref)
    report["frames"] = [p.name for p in gen_files]
    if out_dir:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "metrics.json", "w") as fh:
            json.dump(report, fh, indent=2)
        write_run_meta(out_dir, "eval", None, generated=str(generated),
                       reference=str(reference))
    click.echo(
        f"mean PSNR {report['mean_psnr']:.4f} dB  "
        f"mean SSIM {report['mean_ssim']:.4f}  ({len(gen_files)} frames)"
    )


@main.command("ablate")
@click.option("--axis", required=True,
              type=click.Choice(["exp-injection", "ref-count", "richness"]))
@click.option("--steps", type=int, default=None,
              help="Diffusion steps per variant (defaults to the toy config).")
@click.option("--seed", type=int, default=None,
              help="Base seed; the axis uses seed, seed+1, seed+2.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@cli_errors
def cmd_ablate(axis, steps, seed, out_dir):
    """Train fixed-seed variants along one axis and print a comparison."""
    seeds = None
    if seed is not None:
        seeds = (seed, seed + 1, seed + 2) if axis != "richness" else (seed,)
    report = run_ablation(axis, out_dir, seeds=seeds, steps=steps)
    write_run_meta(Path(out_dir), "ablate", None, axis=axis)
    click.echo(format_table(report))


if __name__ == "__main__":
    main()
