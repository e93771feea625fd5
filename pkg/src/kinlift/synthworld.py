"""Synthetic head-proxy world: analytic stand-in for a captured-face pipeline.

An ellipsoid mesh is deformed linearly by expression coefficients, then
rendered two ways: a grayscale Phong shading map (geometry-only driving
signal) and a procedurally textured appearance frame (stand-in for real
video). Everything is deterministic given the seeds, so rendered frames can
serve as oracles in tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import ConvexHull

from .kinematics import ExpressionTrajectory, ShapeError
from .raster import rasterize_flat


# ---------------------------------------------------------------------------
# scene description


@dataclass(frozen=True)
class Camera:
    """Pinhole camera looking from ``eye`` toward ``target``."""

    eye: tuple[float, float, float] = (0.0, 0.0, 3.0)
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    focal_px: float = 80.0
    height: int = 64
    width: int = 64

    def axes(self):
        eye = np.asarray(self.eye, dtype=np.float64)
        forward = np.asarray(self.target, dtype=np.float64) - eye
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        right = right / np.linalg.norm(right)
        upv = np.cross(right, forward)
        return eye, right, upv, forward

    def project(self, verts: np.ndarray):
        """Project world vertices; returns pixel xy, inverse depth, view depth."""
        eye, right, upv, forward = self.axes()
        rel = verts - eye
        x = rel @ right
        y = rel @ upv
        z = rel @ forward  # positive in front of the camera
        cx = self.width / 2.0
        cy = self.height / 2.0
        px = cx + self.focal_px * x / z
        py = cy - self.focal_px * y / z
        return np.stack([px, py], axis=1), 1.0 / z, z

    def to_dict(self) -> dict:
        return {
            "eye": list(self.eye),
            "target": list(self.target),
            "up": list(self.up),
            "focal_px": self.focal_px,
            "height": self.height,
            "width": self.width,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            eye=tuple(d["eye"]),
            target=tuple(d["target"]),
            up=tuple(d["up"]),
            focal_px=d["focal_px"],
            height=d["height"],
            width=d["width"],
        )


@dataclass(frozen=True)
class PhongMaterial:
    k_a: float = 0.15
    k_d: float = 0.75
    k_s: float = 0.3
    shininess: float = 16.0
    light_dir: tuple[float, float, float] = (0.40824829, 0.40824829, 0.81649658)
    i_a: float = 1.0
    i_d: float = 1.0
    i_s: float = 1.0

    def __post_init__(self):
        for name in ("k_a", "k_d", "k_s"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.shininess <= 0:
            raise ValueError("shininess must be > 0")
        if self.i_a < 0 or self.i_d < 0 or self.i_s < 0:
            raise ValueError("light intensities must be >= 0")
        ld = np.asarray(self.light_dir, dtype=np.float64)
        n = np.linalg.norm(ld)
        if not np.isclose(n, 1.0, atol=1e-6):
            object.__setattr__(self, "light_dir", tuple(ld / n))

    def to_dict(self) -> dict:
        return {
            "k_a": self.k_a,
            "k_d": self.k_d,
            "k_s": self.k_s,
            "shininess": self.shininess,
            "light_dir": list(self.light_dir),
            "i_a": self.i_a,
            "i_d": self.i_d,
            "i_s": self.i_s,
        }

    @staticmethod
    def from_dict(d: dict) -> "PhongMaterial":
        return PhongMaterial(
            k_a=d["k_a"],
            k_d=d["k_d"],
            k_s=d["k_s"],
            shininess=d["shininess"],
            light_dir=tuple(d["light_dir"]),
            i_a=d["i_a"],
            i_d=d["i_d"],
            i_s=d["i_s"],
        )


@dataclass(frozen=True)
class HeadProxy:
    base_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3), outward-oriented
    blend_basis: np.ndarray  # (V, 3, D_exp)
    identity_seed: int

    @property
    def exp_dim(self) -> int:
        return self.blend_basis.shape[2]


@dataclass(frozen=True)
class FrameBundle:
    appearance: np.ndarray  # (H, W, 3) in [0, 1]
    shading: np.ndarray  # (H, W, 3) grayscale replicated, in [0, 1]
    coeff: np.ndarray  # (D_exp,)


# ---------------------------------------------------------------------------
# geometry


def make_head_proxy(
    identity_seed: int,
    v_count: int = 200,
    d_exp: int = 100,
    radii: tuple[float, float, float] = (0.8, 1.0, 0.9),
    basis_amplitude: float = 0.15,
    zero_basis: bool = False,
) -> HeadProxy:
    """Build an ellipsoid head proxy with a smooth expression blend basis.

    Vertices come from a Fibonacci sphere scaled by ``radii``; faces from the
    convex hull, oriented outward. Each blend-basis column is a normal
    displacement field modulated by a low-frequency sinusoid of position, so
    small coefficients give small smooth deformations. Deterministic per seed.
    """
    if v_count < 12:
        raise ValueError("v_count must be >= 12")
    rng = np.random.default_rng(identity_seed)

    # Fibonacci sphere; slight seeded rotation so identities differ in geometry.
    i = np.arange(v_count, dtype=np.float64)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    theta = 2.0 * np.pi * i / golden
    zs = 1.0 - 2.0 * (i + 0.5) / v_count
    r = np.sqrt(1.0 - zs**2)
    pts = np.stack([r * np.cos(theta), r * np.sin(theta), zs], axis=1)
    ang = rng.uniform(0, 2 * np.pi)
    rot = np.array(
        [
            [np.cos(ang), -np.sin(ang), 0.0],
            [np.sin(ang), np.cos(ang), 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    pts = pts @ rot.T
    verts = pts * np.asarray(radii, dtype=np.float64)

    hull = ConvexHull(verts)
    faces = hull.simplices.astype(np.int64)
    # orient every face so its normal points away from the centroid
    center = verts.mean(axis=0)
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    flip = np.einsum("fc,fc->f", normals, (v0 + v1 + v2) / 3.0 - center) < 0
    faces[flip] = faces[flip][:, ::-1]

    if zero_basis:
        basis = np.zeros((v_count, 3, d_exp))
    else:
        vnormals = _vertex_normals(verts, faces)
        unit = pts  # unit-sphere positions, smooth parameterization
        basis = np.empty((v_count, 3, d_exp))
        for d in range(d_exp):
            u = rng.standard_normal(3)
            u /= np.linalg.norm(u)
            freq = rng.uniform(1.0, 3.0)
            phase = rng.uniform(0, 2 * np.pi)
            g = np.sin(freq * (unit @ u) + phase)
            fld = vnormals * g[:, None]
            peak = np.abs(fld).max()
            basis[:, :, d] = fld * (basis_amplitude / peak)
    return HeadProxy(
        base_vertices=verts, faces=faces, blend_basis=basis, identity_seed=identity_seed
    )


def _vertex_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    fn = np.cross(v1 - v0, v2 - v0)
    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    norms = np.linalg.norm(vn, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return vn / norms


def deform_mesh(proxy: HeadProxy, coeff) -> np.ndarray:
    """Vertices of the proxy under an expression: base + basis . coeff."""
    coeff = np.asarray(coeff, dtype=np.float64).reshape(-1)
    if coeff.shape[0] != proxy.exp_dim:
        raise ShapeError(
            f"coefficient length {coeff.shape[0]} != basis dim {proxy.exp_dim}"
        )
    return proxy.base_vertices + np.einsum("vcd,d->vc", proxy.blend_basis, coeff)


# ---------------------------------------------------------------------------
# shading


def phong_face_intensity(
    verts: np.ndarray, faces: np.ndarray, camera: Camera, material: PhongMaterial
) -> np.ndarray:
    """Per-face flat Phong intensity, clamped to [0, 1].

    Degenerate (zero-area) faces get intensity 0; the rasterizer skips them
    anyway.
    """
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    n = np.cross(v1 - v0, v2 - v0)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    ok = norms[:, 0] > 0
    safe = np.where(norms > 0, norms, 1.0)
    n = n / safe

    light = np.asarray(material.light_dir, dtype=np.float64)
    ndotl = np.maximum(0.0, n @ light)

    eye = np.asarray(camera.eye, dtype=np.float64)
    centroid = (v0 + v1 + v2) / 3.0
    view = eye - centroid
    view = view / np.linalg.norm(view, axis=1, keepdims=True)
    refl = 2.0 * ndotl[:, None] * n - light
    rdotv = np.maximum(0.0, np.einsum("fc,fc->f", refl, view))
    spec = np.where(ndotl > 0, rdotv**material.shininess, 0.0)

    intensity = (
        material.k_a * material.i_a
        + material.k_d * ndotl * material.i_d
        + material.k_s * spec * material.i_s
    )
    return np.where(ok, np.clip(intensity, 0.0, 1.0), 0.0)


def _raster_faces(faces: np.ndarray) -> np.ndarray:
    # projection flips y (screen rows grow downward), which mirrors winding;
    # reverse faces so outward-facing triangles have positive screen area.
    return faces[:, ::-1]


def phong_shade(
    verts: np.ndarray, faces: np.ndarray, camera: Camera, material: PhongMaterial
) -> np.ndarray:
    """Rasterize the mesh to a grayscale Phong shading map, replicated to
    3 channels. Background is exactly 0."""
    xy, inv_z, _ = camera.project(verts)
    intensity = phong_face_intensity(verts, faces, camera, material)
    colors = np.repeat(intensity[:, None], 3, axis=1)
    img, _ = rasterize_flat(
        xy, inv_z, _raster_faces(faces), colors, camera.height, camera.width
    )
    return img


def identity_texture(proxy: HeadProxy) -> np.ndarray:
    """Per-face RGB texture anchored to canonical face centroids.

    Smooth sinusoidal color fields seeded by the identity, evaluated at the
    undeformed centroid so the texture tracks the surface under deformation.
    """
    rng = np.random.default_rng(proxy.identity_seed + 7919)
    v = proxy.base_vertices
    c = (v[proxy.faces[:, 0]] + v[proxy.faces[:, 1]] + v[proxy.faces[:, 2]]) / 3.0
    tex = np.empty((proxy.faces.shape[0], 3))
    for ch in range(3):
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        freq = rng.uniform(2.0, 5.0)
        phase = rng.uniform(0, 2 * np.pi)
        tex[:, ch] = 0.55 + 0.45 * np.sin(freq * (c @ u) + phase)
    return np.clip(tex, 0.0, 1.0)


def render_appearance(
    proxy: HeadProxy,
    verts: np.ndarray,
    camera: Camera,
    material: PhongMaterial,
) -> np.ndarray:
    """Appearance frame: Phong intensity modulated by the identity texture."""
    xy, inv_z, _ = camera.project(verts)
    intensity = phong_face_intensity(verts, proxy.faces, camera, material)
    colors = identity_texture(proxy) * intensity[:, None]
    img, _ = rasterize_flat(
        xy, inv_z, _raster_faces(proxy.faces), colors, camera.height, camera.width
    )
    return img


def render_bundle(
    proxy: HeadProxy, coeff, camera: Camera, material: PhongMaterial
) -> FrameBundle:
    verts = deform_mesh(proxy, coeff)
    return FrameBundle(
        appearance=render_appearance(proxy, verts, camera, material),
        shading=phong_shade(verts, proxy.faces, camera, material),
        coeff=np.asarray(coeff, dtype=np.float64).reshape(-1),
    )


# ---------------------------------------------------------------------------
# trajectories and datasets


def sample_trajectory(
    seed: int,
    length: int,
    richness: int,
    d_exp: int = 100,
    mode_scale: float = 1.0,
    wiggle: float = 0.03,
    frame_rate: float = 25.0,
) -> ExpressionTrajectory:
    """Smooth trajectory visiting ``richness`` random expression modes.

    Frames are split into equal blocks, one per mode, with smoothstep
    transitions between consecutive modes plus a small band-limited wiggle.
    richness=1 gives a near-constant (monotonous) trajectory. The per-frame
    block index is attached as ``mode_labels`` for oracle use.
    """
    if length < 1 or richness < 1:
        raise ValueError("length and richness must be >= 1")
    rng = np.random.default_rng(seed)
    modes = rng.standard_normal((richness, d_exp))
    modes *= mode_scale / np.linalg.norm(modes, axis=1, keepdims=True)

    labels = np.minimum((np.arange(length) * richness) // length, richness - 1)
    coeffs = np.empty((length, d_exp))
    block = length / richness
    for t in range(length):
        b = labels[t]
        # smoothstep blend into the next mode over the last 40% of a block
        pos = (t - b * block) / block
        if b + 1 < richness and pos > 0.6:
            s = (pos - 0.6) / 0.4
            s = s * s * (3 - 2 * s)
        else:
            s = 0.0
        nxt = min(b + 1, richness - 1)
        coeffs[t] = (1 - s) * modes[b] + s * modes[nxt]

    # band-limited wiggle, small relative to mode separation
    n_harm = 3
    t_norm = np.arange(length) / max(length, 1)
    for _ in range(n_harm):
        f = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0, 2 * np.pi, size=d_exp)
        amp = wiggle / (n_harm * np.sqrt(d_exp))
        coeffs += amp * np.sin(2 * np.pi * f * t_norm[:, None] + phase[None, :])

    # membership metadata = nearest mode (transition frames belong to the
    # mode they are closest to, not the block they started in)
    d2 = ((coeffs[:, None, :] - modes[None, :, :]) ** 2).sum(axis=2)
    return ExpressionTrajectory(
        coeffs=coeffs, frame_rate=frame_rate, mode_labels=np.argmin(d2, axis=1)
    )


def synth_sequence(
    proxy: HeadProxy,
    trajectory: ExpressionTrajectory,
    camera: Camera,
    material: PhongMaterial,
) -> list[FrameBundle]:
    return [render_bundle(proxy, c, camera, material) for c in trajectory.coeffs]


def synth_dataset(
    proxy: HeadProxy,
    trajectories: list[ExpressionTrajectory],
    camera: Camera,
    material: PhongMaterial,
) -> list[list[FrameBundle]]:
    """Aligned (appearance, shading, coefficient) bundles per trajectory."""
    return [synth_sequence(proxy, t, camera, material) for t in trajectories]


# ---------------------------------------------------------------------------
# on-disk format


def save_image(path, img: np.ndarray):
    """Write a [0, 1] float image as 8-bit PNG (round-to-nearest)."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """The value actually stored by save_image, as floats in [0, 1]."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def write_dataset(
    out_dir,
    proxy: HeadProxy,
    trajectories: list[ExpressionTrajectory],
    sequences: list[list[FrameBundle]],
    camera: Camera,
    material: PhongMaterial,
    seeds: dict | None = None,
) -> Path:
    """Write frames, shading maps, coefficient CSVs, and the manifest.

    The manifest (manifest.json) is the dataset contract consumed by the
    training CLI: it lists per-frame file paths, coefficient CSV paths, the
    camera, material, and seeds.
    """
    from .kinematics import save_trajectory_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "resolution": [camera.height, camera.width],
        "camera": camera.to_dict(),
        "material": material.to_dict(),
        "identity_seed": proxy.identity_seed,
        "v_count": int(proxy.base_vertices.shape[0]),
        "d_exp": proxy.exp_dim,
        "seeds": seeds or {},
        "sequences": [],
    }
    for si, (traj, seq) in enumerate(zip(trajectories, sequences)):
        frame_dir = out / "frames" / f"seq{si:03d}"
        shade_dir = out / "shading" / f"seq{si:03d}"
        frame_dir.mkdir(parents=True, exist_ok=True)
        shade_dir.mkdir(parents=True, exist_ok=True)
        frames, shadings = [], []
        for fi, bundle in enumerate(seq):
            fp = frame_dir / f"frame{fi:04d}.png"
            sp = shade_dir / f"frame{fi:04d}.png"
            save_image(fp, bundle.appearance)
            save_image(sp, bundle.shading)
            frames.append(str(fp.relative_to(out)))
            shadings.append(str(sp.relative_to(out)))
        csv_path = out / "coeffs" / f"seq{si:03d}.csv"
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        save_trajectory_csv(csv_path, traj)
        manifest["sequences"].append(
            {
                "frames": frames,
                "shading": shadings,
                "coeffs": str(csv_path.relative_to(out)),
                "length": len(seq),
                "frame_rate": traj.frame_rate,
            }
        )
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return out


@dataclass
class LoadedDataset:
    manifest: dict
    camera: Camera
    material: PhongMaterial
    trajectories: list[ExpressionTrajectory]
    appearance: list[np.ndarray]  # per sequence: (N, H, W, 3)
    shading: list[np.ndarray]  # per sequence: (N, H, W, 3)
    root: Path = field(default_factory=Path)


def load_dataset(root) -> LoadedDataset:
    from .kinematics import load_trajectory_csv

    root = Path(root)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    camera = Camera.from_dict(manifest["camera"])
    material = PhongMaterial.from_dict(manifest["material"])
    trajectories, appearance, shading = [], [], []
    for seq in manifest["sequences"]:
        trajectories.append(
            load_trajectory_csv(root / seq["coeffs"], frame_rate=seq["frame_rate"])
        )
        appearance.append(np.stack([load_image(root / p) for p in seq["frames"]]))
        shading.append(np.stack([load_image(root / p) for p in seq["shading"]]))
    return LoadedDataset(
        manifest=manifest,
        camera=camera,
        material=material,
        trajectories=trajectories,
        appearance=appearance,
        shading=shading,
        root=root,
    )
