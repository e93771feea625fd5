"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Criteria (all primary):
 1. invariant bundle green, < 10 min
 2. finite-difference gradient checks, rel err < 1e-4 (float64), < 5 min
 3. overfit rig: loss@500 < 10% of step-1 loss; lift PSNR >= 25 dB; < 30 min
 4. controllability: >= 80% of held-out frames closer to their true target
    than to a random-expression frame
 5. expression-injection trend: with >= without (3 seeds)
 6. reference-count trend: non-decreasing M=1..5 within 0.2 dB/step (3 seeds)
 7. K-means coverage <= random selection coverage (100 seeds)
 8. richness sweep {1, 2, 5}: reported, not gated

The training-based criteria (3-6, 8) share the toy configuration from
``kinlift.ablate`` and run on a single CPU core.
"""

import time

import numpy as np
import pytest
import torch

import kinlift.ablate as ablate
from kinlift.backbone import BackboneConfig, DiT, adapter_parameters, attach_adapters
from kinlift.checkpoint import load_checkpoint, restore_model, save_checkpoint
from kinlift.config import RunConfig
from kinlift.encoders import (
    DrivenShadingEncoder,
    EncoderConfig,
    ExpressionEmbed,
    ImageAutoencoder,
    ReferenceShadingEncoder,
)
from kinlift.flowmatch import TimestepSampler, fm_loss, interpolate, sample_video
from kinlift.kinematics import (
    ExpressionTrajectory,
    assign_clusters,
    coverage_stats,
    kmeans,
    select_references,
    update_centroids,
)
from kinlift.metrics import frame_metrics, psnr
from kinlift.synthworld import (
    Camera,
    PhongMaterial,
    deform_mesh,
    make_head_proxy,
    phong_shade,
    render_bundle,
    sample_trajectory,
)
from kinlift.train import (
    Trainer,
    TrainingData,
    lift_frames,
    reference_inputs,
    synthesize_world,
    training_batch,
)


@pytest.fixture
def report(request):
    """Prints an uncaptured '[PASS|FAIL] criterion N: ...' line per test."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    lines = []

    def emit(number, name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] criterion {number}: {name}"
        if detail:
            line += f" — {detail}"
        lines.append((line, passed))
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        else:  # pragma: no cover
            print(line)
        assert passed, line

    return emit


def _fd_rel_errors(fn, x, n_probe=5, eps=1e-6):
    """Max relative error between autograd and central differences at the
    largest-magnitude gradient entries (all float64)."""
    x = x.double().requires_grad_(True)
    out = fn(x)
    rng = np.random.default_rng(0)
    w = torch.tensor(rng.normal(size=tuple(out.shape)))
    (grad,) = torch.autograd.grad((out * w).sum(), x)
    gflat = grad.reshape(-1)
    idx = torch.argsort(gflat.abs(), descending=True)[:n_probe]
    worst = 0.0
    for i in idx:
        flat = x.detach().reshape(-1)
        xp, xm = flat.clone(), flat.clone()
        xp[i] += eps
        xm[i] -= eps
        with torch.no_grad():
            fp = (fn(xp.reshape(x.shape)) * w).sum().item()
            fm_ = (fn(xm.reshape(x.shape)) * w).sum().item()
        fd = (fp - fm_) / (2 * eps)
        an = gflat[i].item()
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def test_criterion_1_invariants(report):
    t0 = time.perf_counter()

    # K-means: argmin assignment, mean update, monotone inertia
    rng = np.random.default_rng(0)
    coeffs = rng.normal(size=(60, 5))
    cents = rng.normal(size=(4, 5))
    labels = assign_clusters(coeffs, cents)
    d = ((coeffs[:, None] - cents[None]) ** 2).sum(axis=2)
    assert np.array_equal(labels, d.argmin(axis=1))
    upd = update_centroids(coeffs, labels, 4, previous=cents)
    for c in range(4):
        if (labels == c).any():
            assert np.allclose(upd[c], coeffs[labels == c].mean(axis=0))
    cents_i = coeffs[:4].copy()
    inertias = []
    for _ in range(10):  # Lloyd iterations never increase inertia
        lab = assign_clusters(coeffs, cents_i)
        cents_i = update_centroids(coeffs, lab, 4, previous=cents_i)
        lab = assign_clusters(coeffs, cents_i)
        inertias.append(((coeffs - cents_i[lab]) ** 2).sum())
    assert all(b <= a + 1e-12 for a, b in zip(inertias, inertias[1:]))
    state = kmeans(coeffs, 4, seed=1)
    assert state.inertia >= 0

    # encoder shape contracts
    tiny = EncoderConfig(base_width=4)
    assert DrivenShadingEncoder(tiny)(torch.zeros(1, 3, 8, 16, 16)).shape == (1, 16, 2, 2, 2)
    assert ReferenceShadingEncoder(tiny)(torch.zeros(1, 3, 16, 16)).shape == (1, 16, 2, 2)
    assert ImageAutoencoder(tiny)(torch.zeros(1, 3, 16, 16)).shape == (1, 3, 16, 16)

    # adapter attach is an exact identity
    dit = DiT(BackboneConfig(d_model=32, n_layers=1, n_heads=2, d_ctx=8))
    tok = torch.randn(1, 10, 32)
    t = torch.tensor([0.5])
    ctx = torch.randn(1, 4, 8)
    mask = torch.zeros(10, dtype=torch.bool)
    mask[4:] = True
    before = dit(tok, t, ctx, mask)
    attach_adapters(dit, rank=4, seed=0)
    assert torch.equal(before, dit(tok, t, ctx, mask))

    # flow endpoints + zero loss at the true velocity
    x0, x1 = torch.randn(2, 6), torch.randn(2, 6)
    assert torch.equal(interpolate(x0, x1, torch.zeros(2)), x0)
    assert torch.equal(interpolate(x0, x1, torch.ones(2)), x1)
    assert fm_loss(x1 - x0, x0, x1).item() == 0.0

    # Euler constant-field exactness
    from types import SimpleNamespace

    dummy = SimpleNamespace(
        cfg=SimpleNamespace(enc=SimpleNamespace(latent_channels=16, spatial_factor=8)),
        decode_video=lambda z: z,
    )
    cond = (
        torch.zeros(1, 1, 3, 16, 16), torch.zeros(1, 1, 3, 16, 16),
        torch.zeros(1, 1, 4), torch.zeros(1, 3, 8, 16, 16), torch.zeros(1, 8, 4),
    )
    out = sample_video(dummy, *cond, steps=5, seed=3,
                       velocity_fn=lambda z, tt: torch.full_like(z, 0.25))
    x_init = torch.randn(1, 16, 8, 2, 2, generator=torch.Generator().manual_seed(3))
    assert torch.allclose(out, (x_init + 0.25).clamp(0, 1), atol=1e-6)

    # Phong formula oracle on a camera-facing triangle
    cam = Camera(height=16, width=16, focal_px=20.0)
    verts = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, 0.0]])
    mat = PhongMaterial(k_a=0.0, k_d=1.0, k_s=0.0, light_dir=(0, 0, 1))
    img = phong_shade(verts, np.array([[0, 1, 2]]), cam, mat)
    covered = img[..., 0][img[..., 0] > 0]
    assert covered.size and np.allclose(covered, 1.0)  # L == N -> k_d * 1

    # checkpoint round-trip bit-exactness (tiny model)
    cfg = RunConfig()
    cfg.world.resolution = 32
    cfg.world.exp_dim = 6
    cfg.world.n_trajectories = 1
    cfg.world.trajectory_length = 8
    cfg.world.v_count = 60
    cfg.d_model = 32
    cfg.n_layers = 1
    cfg.n_heads = 2
    from kinlift.model import LiftModel
    import tempfile, pathlib

    torch.manual_seed(0)
    model = LiftModel(cfg.model_config())
    model.attach_adapters(seed=0)
    with tempfile.TemporaryDirectory() as td:
        p = pathlib.Path(td) / "ck.pt"
        save_checkpoint(p, model, step=0, run_config=cfg.to_dict(),
                        adapters_attached=True, adapter_seed=0)
        restored = restore_model(load_checkpoint(p))
    gen = torch.Generator().manual_seed(1)
    args = (
        torch.rand(1, 2, 3, 32, 32, generator=gen),
        torch.rand(1, 2, 3, 32, 32, generator=gen),
        torch.randn(1, 2, 6, generator=gen),
        torch.rand(1, 3, 8, 32, 32, generator=gen),
        torch.randn(1, 8, 6, generator=gen),
        torch.randn(1, 16, 8, 4, 4, generator=gen),
        torch.tensor([0.3]),
    )
    with torch.no_grad():
        assert torch.equal(model(*args), restored(*args))

    elapsed = time.perf_counter() - t0
    report(1, "invariant bundle", elapsed < 600, f"{elapsed:.1f}s (< 600s)")


def test_criterion_2_gradient_checks(report):
    t0 = time.perf_counter()
    torch.manual_seed(0)
    tiny = EncoderConfig(base_width=4)
    worst = {}

    enc = DrivenShadingEncoder(tiny).double()
    with torch.no_grad():  # counteract depth attenuation (see tests/test_encoders)
        for p in enc.parameters():
            p *= 3.0
    worst["driven-shading"] = _fd_rel_errors(enc, torch.randn(1, 3, 4, 8, 8))

    worst["reference-shading"] = _fd_rel_errors(
        ReferenceShadingEncoder(tiny).double(), torch.randn(1, 3, 8, 8)
    )
    worst["expression-embed"] = _fd_rel_errors(
        ExpressionEmbed(5, 7).double(), torch.randn(2, 5)
    )
    worst["autoencoder"] = _fd_rel_errors(
        ImageAutoencoder(tiny).double(), torch.randn(1, 3, 8, 8)
    )

    dit = DiT(BackboneConfig(d_model=12, n_layers=1, n_heads=2, d_ctx=4))
    gen = torch.Generator().manual_seed(11)
    with torch.no_grad():  # move the zero-initialized modulation off identity
        for block in dit.blocks:
            block.ada.weight.add_(torch.randn(block.ada.weight.shape, generator=gen) * 0.1)
            block.ada.bias.add_(torch.randn(block.ada.bias.shape, generator=gen) * 0.1)
    dit = dit.double()
    ctx = torch.randn(1, 3, 4, dtype=torch.float64)
    t = torch.tensor([0.4], dtype=torch.float64)
    mask = torch.zeros(6, dtype=torch.bool)
    mask[2:] = True
    worst["backbone"] = _fd_rel_errors(
        lambda x: dit(x, t, ctx, mask), torch.randn(1, 6, 12)
    )

    lora_dit = DiT(BackboneConfig(d_model=12, n_layers=1, n_heads=2, d_ctx=4))
    attach_adapters(lora_dit, rank=2, seed=0)
    with torch.no_grad():
        for p in adapter_parameters(lora_dit):
            p.add_(torch.randn(p.shape, generator=gen) * 0.05)
        for block in lora_dit.blocks:
            block.ada.bias.add_(torch.randn(block.ada.bias.shape, generator=gen) * 0.1)
    lora_dit = lora_dit.double()
    worst["adapters"] = _fd_rel_errors(
        lambda x: lora_dit(x, t, ctx, mask), torch.randn(1, 6, 12)
    )

    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v >= 1e-4}
    detail = (
        f"max rel err {max(worst.values()):.2e} over {len(worst)} modules, "
        f"{elapsed:.1f}s (< 300s)"
    )
    report(2, "finite-difference gradient checks",
           not bad and elapsed < 300, detail)


@pytest.mark.slow
def test_criterion_3_overfit_rig(report):
    t0 = time.perf_counter()
    cfg = RunConfig()
    cfg.world.n_trajectories = 1
    cfg.world.trajectory_length = 16
    cfg.world.richness = 3
    cfg.d_model = 256
    cfg.train.ae_steps = 1500
    cfg.train.lr_decay_steps = 1500
    cfg.train.draws_per_step = 4
    proxy, camera, material, trajectories, sequences = synthesize_world(cfg)
    data = TrainingData.from_sequences(trajectories, sequences)
    trainer = Trainer(cfg, data, "/tmp/acceptance_overfit")
    trainer.pretrain_autoencoder()

    records = trainer.train(500, checkpoint_every=0)
    loss1, loss500 = records[0]["loss"], records[-1]["loss"]
    ratio = loss500 / loss1

    batch = trainer._batches[0]
    refs = {k: batch[k] for k in ("ref_images", "ref_shading", "ref_coeffs")}
    out = lift_frames(
        trainer.model, refs, data.shading[0], data.coeffs[0],
        steps=cfg.flow.sample_steps, seed=cfg.seeds.infer_noise,
    )
    lift_psnr = frame_metrics(out, data.appearance[0])["mean_psnr"]

    # Trained-model invariants: more solver steps must change the output,
    # and dropping a reference must change the output (no-degeneracy).
    one_step = lift_frames(
        trainer.model, refs, data.shading[0], data.coeffs[0],
        steps=1, seed=cfg.seeds.infer_noise,
    )
    assert not np.allclose(one_step, out, atol=1e-4), \
        "1-step and multi-step solver outputs are identical"
    fewer_refs = {k: v[:, :-1] for k, v in refs.items()}
    dropped = lift_frames(
        trainer.model, fewer_refs, data.shading[0], data.coeffs[0],
        steps=cfg.flow.sample_steps, seed=cfg.seeds.infer_noise,
    )
    assert not np.allclose(dropped, out, atol=1e-4), \
        "removing a reference did not change the output"

    elapsed = time.perf_counter() - t0
    ok = ratio < 0.10 and lift_psnr >= 25.0 and elapsed < 1800
    report(3, "overfit rig",
           ok,
           f"loss ratio {ratio:.3f} (< 0.10), lift PSNR {lift_psnr:.2f} dB "
           f"(>= 25), {elapsed:.0f}s (< 1800s)")


@pytest.mark.slow
def test_criterion_4_controllability(report):
    cfg = ablate.toy_config(seed=0)
    cfg.world.n_trajectories = 8
    cfg.world.trajectory_length = 16
    cfg.train.draws_per_step = 4
    cfg.train.diffusion_steps = 1000
    cfg.train.lr_decay_steps = 1000
    trainer, data, world = ablate.train_variant(cfg, "/tmp/acceptance_ctrl")
    traj, shading, target = ablate.heldout_driving(cfg, world)

    refs_traj = ExpressionTrajectory(coeffs=data.coeffs[0])
    idx = select_references(refs_traj, cfg.n_references, seed=cfg.seeds.kmeans)
    refs = reference_inputs(data, 0, idx)
    out = lift_frames(
        trainer.model, refs, shading, traj.coeffs,
        steps=cfg.flow.sample_steps, seed=cfg.seeds.infer_noise,
    )

    proxy, camera, material, _ = world
    rng = np.random.default_rng(123)
    wins = 0
    for i in range(len(out)):
        true_psnr = psnr(out[i], target[i])
        rand_coeff = traj.coeffs[rng.integers(len(traj.coeffs))] + rng.normal(
            scale=0.5, size=traj.coeffs.shape[1]
        )
        decoy = render_bundle(proxy, rand_coeff, camera, material).appearance
        if true_psnr > psnr(out[i], decoy):
            wins += 1
    frac = wins / len(out)
    report(4, "controllability on held-out driving", frac >= 0.8,
           f"{wins}/{len(out)} frames ({frac:.0%}, >= 80%)")


@pytest.mark.slow
def test_criterion_5_expression_injection_trend(report):
    result = ablate.ablate_exp_injection("/tmp/acceptance_exp", seeds=(0, 1, 2))
    with_exp = result["rows"][0]["mean_psnr"]
    without = result["rows"][1]["mean_psnr"]
    report(5, "expression-injection trend", with_exp >= without,
           f"with {with_exp:.2f} dB vs without {without:.2f} dB "
           f"(gap {result['gap_db']:+.3f})")


@pytest.mark.slow
def test_criterion_6_reference_count_trend(report):
    result = ablate.ablate_ref_count("/tmp/acceptance_refs", seeds=(0, 1, 2))
    means = [row["mean_psnr"] for row in result["rows"]]
    steps_ok = all(b >= a - 0.2 for a, b in zip(means, means[1:]))
    detail = " -> ".join(
        f"M={row['n_references']}:{row['mean_psnr']:.2f}" for row in result["rows"]
    )
    report(6, "reference-count trend (0.2 dB allowance)", steps_ok, detail)


def test_criterion_7_kmeans_coverage(report):
    traj = sample_trajectory(seed=21, length=120, richness=5, d_exp=16)
    k = 5
    km_means, rnd_means = [], []
    for seed in range(100):
        km_idx = select_references(traj, k, seed=seed)
        km_means.append(coverage_stats(traj, km_idx)["mean_distance"])
        rng = np.random.default_rng(seed)
        rnd_idx = sorted(rng.choice(len(traj), size=k, replace=False).tolist())
        rnd_means.append(coverage_stats(traj, rnd_idx)["mean_distance"])
    km, rnd = float(np.mean(km_means)), float(np.mean(rnd_means))
    report(7, "K-means coverage vs random (100 seeds)", km <= rnd,
           f"kmeans {km:.4f} <= random {rnd:.4f}")


@pytest.mark.slow
def test_criterion_8_richness_sweep(report):
    result = ablate.ablate_richness("/tmp/acceptance_rich", seeds=(0,))
    means = [row["mean_psnr"] for row in result["rows"]]
    detail = ", ".join(
        f"richness={row['richness']}: {row['mean_psnr']:.2f} dB"
        for row in result["rows"]
    )
    # reported, not gated: the sweep must exist and be finite
    report(8, "richness sweep (reported)", all(np.isfinite(means)), detail)
