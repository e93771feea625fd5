import dataclasses
import math

import numpy as np
import pytest

from kinlift.kinematics import ShapeError
from kinlift.synthworld import (
    Camera,
    PhongMaterial,
    deform_mesh,
    identity_texture,
    load_dataset,
    load_image,
    make_head_proxy,
    phong_shade,
    quantize,
    render_appearance,
    render_bundle,
    sample_trajectory,
    save_image,
    synth_dataset,
    write_dataset,
)

CAM = Camera(height=32, width=32, focal_px=40.0)
MAT = PhongMaterial()


def scalar_phong(n, centroid, camera, material):
    """Independent Phong evaluation: pure-python scalar math."""
    light = material.light_dir
    ndotl = max(0.0, sum(a * b for a, b in zip(n, light)))
    view = [e - c for e, c in zip(camera.eye, centroid)]
    vn = math.sqrt(sum(v * v for v in view))
    view = [v / vn for v in view]
    refl = [2.0 * ndotl * a - b for a, b in zip(n, light)]
    rdotv = max(0.0, sum(a * b for a, b in zip(refl, view)))
    spec = rdotv**material.shininess if ndotl > 0 else 0.0
    val = (
        material.k_a * material.i_a
        + material.k_d * ndotl * material.i_d
        + material.k_s * spec * material.i_s
    )
    return min(max(val, 0.0), 1.0)


def ray_trace_oracle(verts, faces, camera, material):
    """Per-pixel ray test + direct Phong evaluation (front faces only)."""
    eye, right, upv, forward = camera.axes()
    h, w = camera.height, camera.width
    cx, cy, f = w / 2.0, h / 2.0, camera.focal_px
    img = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            d = (
                ((j + 0.5 - cx) / f) * right
                + ((cy - (i + 0.5)) / f) * upv
                + forward
            )
            best_t = np.inf
            best_val = 0.0
            for face in faces:
                v0, v1, v2 = verts[face[0]], verts[face[1]], verts[face[2]]
                e1, e2 = v1 - v0, v2 - v0
                pvec = np.cross(d, e2)
                det = float(e1 @ pvec)
                if det <= 1e-12:  # back-facing or parallel
                    continue
                tvec = eye - v0
                u = float(tvec @ pvec) / det
                if u < 0 or u > 1:
                    continue
                qvec = np.cross(tvec, e1)
                v = float(d @ qvec) / det
                if v < 0 or u + v > 1:
                    continue
                t = float(e2 @ qvec) / det
                if 0 < t < best_t:
                    best_t = t
                    n = np.cross(e1, e2)
                    n = n / np.linalg.norm(n)
                    best_val = scalar_phong(n, (v0 + v1 + v2) / 3.0, camera, material)
            img[i, j] = best_val
    return img


class TestHeadProxy:
    def test_deterministic(self):
        a = make_head_proxy(4, v_count=50, d_exp=6)
        b = make_head_proxy(4, v_count=50, d_exp=6)
        assert np.array_equal(a.base_vertices, b.base_vertices)
        assert np.array_equal(a.blend_basis, b.blend_basis)

    def test_seeds_differ(self):
        a = make_head_proxy(1, v_count=50, d_exp=6)
        b = make_head_proxy(2, v_count=50, d_exp=6)
        assert not np.array_equal(a.base_vertices, b.base_vertices)

    def test_zero_basis_is_identity_deformation(self):
        p = make_head_proxy(0, v_count=40, d_exp=4, zero_basis=True)
        coeff = np.ones(4) * 3.0
        assert np.array_equal(deform_mesh(p, coeff), p.base_vertices)

    def test_faces_outward(self):
        p = make_head_proxy(0, v_count=60, d_exp=2)
        v = p.base_vertices
        center = v.mean(axis=0)
        v0, v1, v2 = v[p.faces[:, 0]], v[p.faces[:, 1]], v[p.faces[:, 2]]
        n = np.cross(v1 - v0, v2 - v0)
        outward = np.einsum("fc,fc->f", n, (v0 + v1 + v2) / 3 - center)
        assert np.all(outward > 0)

    def test_min_vertices_enforced(self):
        with pytest.raises(ValueError):
            make_head_proxy(0, v_count=8)


class TestDeformMesh:
    def test_zero_coeff_gives_base(self):
        p = make_head_proxy(3, v_count=40, d_exp=5)
        assert np.array_equal(deform_mesh(p, np.zeros(5)), p.base_vertices)

    def test_linearity(self):
        p = make_head_proxy(3, v_count=40, d_exp=5)
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=5), rng.normal(size=5)
        lhs = deform_mesh(p, a + b)
        rhs = deform_mesh(p, a) + deform_mesh(p, b) - p.base_vertices
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_matches_triple_loop_oracle(self):
        p = make_head_proxy(5, v_count=30, d_exp=4)
        coeff = np.random.default_rng(1).normal(size=4)
        expected = p.base_vertices.copy()
        for vi in range(30):
            for ci in range(3):
                for di in range(4):
                    expected[vi, ci] += p.blend_basis[vi, ci, di] * coeff[di]
        assert np.allclose(deform_mesh(p, coeff), expected, atol=1e-12)

    def test_wrong_dim_rejected(self):
        p = make_head_proxy(0, v_count=30, d_exp=4)
        with pytest.raises(ShapeError):
            deform_mesh(p, np.zeros(6))


def single_triangle_scene():
    verts = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, 0.0]])
    faces = np.array([[0, 1, 2]])  # normal +z, toward the default camera
    return verts, faces


class TestPhongShade:
    def test_ambient_only(self):
        verts, faces = single_triangle_scene()
        mat = PhongMaterial(k_a=0.3, k_d=0.0, k_s=0.0)
        img = phong_shade(verts, faces, CAM, mat)
        covered = img[..., 0][img[..., 0] > 0]
        assert covered.size > 0
        assert np.allclose(covered, 0.3 * mat.i_a)

    def test_normal_toward_light_saturates(self):
        verts, faces = single_triangle_scene()
        mat = PhongMaterial(k_a=0.0, k_d=1.0, k_s=0.0, light_dir=(0, 0, 1))
        img = phong_shade(verts, faces, CAM, mat)
        covered = img[..., 0][img[..., 0] > 0]
        assert np.allclose(covered, 1.0)

    def test_single_triangle_matches_ray_oracle(self):
        verts, faces = single_triangle_scene()
        img = phong_shade(verts, faces, CAM, MAT)[..., 0]
        oracle = ray_trace_oracle(verts, faces, CAM, MAT)
        both = (img > 0) & (oracle > 0)
        assert np.mean((img > 0) != (oracle > 0)) <= 0.01  # edge pixels only
        assert np.allclose(img[both], oracle[both], atol=1e-9)

    def test_mesh_matches_ray_oracle_with_depth(self):
        p = make_head_proxy(2, v_count=40, d_exp=3)
        verts = deform_mesh(p, np.array([0.5, -0.3, 0.2]))
        img = phong_shade(verts, p.faces, CAM, MAT)[..., 0]
        oracle = ray_trace_oracle(verts, p.faces, CAM, MAT)
        both = (img > 0) & (oracle > 0)
        assert np.mean((img > 0) != (oracle > 0)) <= 0.01
        agree = np.isclose(img[both], oracle[both], atol=1e-9)
        assert np.mean(agree) >= 0.99  # depth-tie pixels may differ

    def test_pixels_in_unit_range_background_zero(self):
        p = make_head_proxy(6, v_count=80, d_exp=3)
        img = phong_shade(p.base_vertices, p.faces, CAM, MAT)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert np.all(img[np.all(img == 0, axis=2)] == 0)

    def test_channels_replicated(self):
        verts, faces = single_triangle_scene()
        img = phong_shade(verts, faces, CAM, MAT)
        assert np.array_equal(img[..., 0], img[..., 1])
        assert np.array_equal(img[..., 0], img[..., 2])


class TestAppearance:
    def test_deterministic(self):
        p = make_head_proxy(9, v_count=60, d_exp=4)
        v = deform_mesh(p, np.full(4, 0.2))
        a = render_appearance(p, v, CAM, MAT)
        b = render_appearance(p, v, CAM, MAT)
        assert np.array_equal(a, b)

    def test_identities_have_different_colors(self):
        pa = make_head_proxy(1, v_count=60, d_exp=4)
        pb = dataclasses.replace(pa, identity_seed=2)  # same geometry
        va = render_appearance(pa, pa.base_vertices, CAM, MAT)
        vb = render_appearance(pb, pb.base_vertices, CAM, MAT)
        assert not np.allclose(va.mean(axis=(0, 1)), vb.mean(axis=(0, 1)), atol=1e-3)

    def test_texture_does_not_change_shading(self):
        pa = make_head_proxy(1, v_count=60, d_exp=4)
        pb = dataclasses.replace(pa, identity_seed=2)
        sa = phong_shade(pa.base_vertices, pa.faces, CAM, MAT)
        sb = phong_shade(pb.base_vertices, pb.faces, CAM, MAT)
        assert np.array_equal(sa, sb)

    def test_same_coverage_as_shading(self):
        p = make_head_proxy(3, v_count=60, d_exp=4)
        app = render_appearance(p, p.base_vertices, CAM, MAT)
        shd = phong_shade(p.base_vertices, p.faces, CAM, MAT)
        # shared rasterizer: anything lit in one is covered in the other
        mat0 = PhongMaterial(k_a=1.0, k_d=0.0, k_s=0.0)
        app0 = render_appearance(p, p.base_vertices, CAM, mat0)
        shd0 = phong_shade(p.base_vertices, p.faces, CAM, mat0)
        assert np.array_equal(np.any(app0 > 0, axis=2), np.any(shd0 > 0, axis=2))

    def test_texture_in_range(self):
        p = make_head_proxy(12, v_count=40, d_exp=2)
        tex = identity_texture(p)
        assert tex.min() >= 0.0 and tex.max() <= 1.0


class TestTrajectory:
    def test_single_mode_near_constant(self):
        traj = sample_trajectory(seed=0, length=50, richness=1, d_exp=16)
        d = np.linalg.norm(traj.coeffs[:, None] - traj.coeffs[None, :], axis=2)
        assert d.max() < 0.2

    def test_deterministic(self):
        a = sample_trajectory(seed=3, length=30, richness=4, d_exp=8)
        b = sample_trajectory(seed=3, length=30, richness=4, d_exp=8)
        assert np.array_equal(a.coeffs, b.coeffs)

    def test_mode_labels_cover_all_modes(self):
        traj = sample_trajectory(seed=2, length=100, richness=5, d_exp=12)
        assert set(traj.mode_labels.tolist()) == {0, 1, 2, 3, 4}

    def test_bad_args_rejected(self):
        with pytest.raises(ValueError):
            sample_trajectory(seed=0, length=0, richness=1)


class TestDataset:
    def make(self, n_traj=2, length=4):
        proxy = make_head_proxy(0, v_count=50, d_exp=6)
        trajs = [
            sample_trajectory(seed=i, length=length, richness=2, d_exp=6)
            for i in range(n_traj)
        ]
        seqs = synth_dataset(proxy, trajs, CAM, MAT)
        return proxy, trajs, seqs

    def test_shading_is_composition(self):
        proxy, trajs, seqs = self.make()
        bundle = seqs[1][2]
        verts = deform_mesh(proxy, trajs[1].coeffs[2])
        assert np.array_equal(bundle.shading, phong_shade(verts, proxy.faces, CAM, MAT))

    def test_counts_and_shapes(self):
        _, _, seqs = self.make(n_traj=2, length=16)
        assert sum(len(s) for s in seqs) == 32
        b = seqs[0][0]
        assert b.appearance.shape == (32, 32, 3)
        assert b.shading.shape == (32, 32, 3)
        assert b.coeff.shape == (6,)

    def test_round_trip_exact(self, tmp_path):
        proxy, trajs, seqs = self.make()
        write_dataset(tmp_path / "ds", proxy, trajs, seqs, CAM, MAT)
        back = load_dataset(tmp_path / "ds")
        assert np.array_equal(back.appearance[0][1], quantize(seqs[0][1].appearance))
        assert np.array_equal(back.shading[1][3], quantize(seqs[1][3].shading))
        assert np.allclose(back.trajectories[0].coeffs, trajs[0].coeffs)

    def test_png_write_deterministic(self, tmp_path):
        proxy, trajs, seqs = self.make(n_traj=1, length=2)
        save_image(tmp_path / "a.png", seqs[0][0].appearance)
        save_image(tmp_path / "b.png", seqs[0][0].appearance)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_load_image_inverts_save(self, tmp_path):
        img = np.random.default_rng(0).uniform(size=(16, 16, 3))
        save_image(tmp_path / "x.png", img)
        assert np.array_equal(load_image(tmp_path / "x.png"), quantize(img))

    def test_bundle_composition_helper(self):
        proxy, trajs, _ = self.make(n_traj=1)
        b = render_bundle(proxy, trajs[0].coeffs[0], CAM, MAT)
        verts = deform_mesh(proxy, trajs[0].coeffs[0])
        assert np.array_equal(b.appearance, render_appearance(proxy, verts, CAM, MAT))
