"""Rotation/pose algebra against independent oracles."""

import numpy as np
import pytest

from anyview.errors import DegenerateInput
from anyview.geometry import (
    Pose,
    Sim3,
    apply_sim3,
    geodesic_angle,
    is_rotation,
    relative_pose,
    rotation_from_9d,
    so3_exp,
    umeyama_sim3,
    unproject,
)
from conftest import default_intrinsics, higham_polar, random_pose, random_rotation, rotation_to_quaternion


class TestRotationFrom9D:
    def test_identity(self):
        np.testing.assert_allclose(rotation_from_9d(np.eye(3)), np.eye(3), atol=1e-12)

    def test_uniform_scale_removed(self):
        rng = np.random.default_rng(0)
        r = random_rotation(rng)
        np.testing.assert_allclose(rotation_from_9d(2.0 * r), r, atol=1e-10)

    def test_matches_polar_oracle(self):
        rng = np.random.default_rng(1)
        checked = 0
        while checked < 50:
            m = rng.normal(size=(3, 3))
            if np.linalg.det(m) <= 0.05:
                continue  # polar factor is the nearest rotation only for det > 0
            checked += 1
            np.testing.assert_allclose(rotation_from_9d(m), higham_polar(m), atol=1e-8)

    def test_invariants_on_random_inputs(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            m = rng.normal(size=9)
            if abs(np.linalg.det(m.reshape(3, 3))) < 1e-6:
                continue
            r = rotation_from_9d(m)
            assert is_rotation(r, tol=1e-9)

    def test_idempotent_on_rotations(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            r = random_rotation(rng)
            np.testing.assert_allclose(rotation_from_9d(r), r, atol=1e-10)

    def test_negative_det_gives_nearest_rotation(self):
        # for reflective input the output must still be a proper rotation and
        # locally optimal in Frobenius distance
        rng = np.random.default_rng(4)
        m = rng.normal(size=(3, 3))
        if np.linalg.det(m) > 0:
            m[0] = -m[0]
        r = rotation_from_9d(m)
        assert is_rotation(r)
        base = np.linalg.norm(r - m)
        for _ in range(20):
            r2 = so3_exp(rng.normal(size=3) * 1e-3) @ r
            assert np.linalg.norm(r2 - m) >= base - 1e-12

    def test_rank_deficient_rejected(self):
        m = np.outer([1.0, 2.0, 3.0], [1.0, 0.0, 1.0])
        with pytest.raises(DegenerateInput):
            rotation_from_9d(m)


class TestGeodesicAngle:
    def test_identical(self):
        assert geodesic_angle(np.eye(3), np.eye(3)) == 0.0

    def test_antipodal(self):
        rz = so3_exp([0.0, 0.0, np.pi])
        assert geodesic_angle(np.eye(3), rz) == pytest.approx(np.pi, abs=1e-12)

    def test_quaternion_oracle(self):
        r1 = so3_exp([0.3, 0.0, 0.0])
        r2 = so3_exp([0.0, 0.2, 0.0])
        q1 = rotation_to_quaternion(r1)
        q2 = rotation_to_quaternion(r2)
        expected = 2.0 * np.arccos(min(abs(float(q1 @ q2)), 1.0))
        assert geodesic_angle(r1, r2) == pytest.approx(expected, abs=1e-10)

    def test_properties(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            r1, r2, q = (random_rotation(rng) for _ in range(3))
            a = geodesic_angle(r1, r2)
            assert 0.0 <= a <= np.pi
            assert a == pytest.approx(geodesic_angle(r2, r1), abs=1e-12)
            assert geodesic_angle(q @ r1, q @ r2) == pytest.approx(a, abs=1e-9)
        assert geodesic_angle(r1, r1) < 1e-9


class TestRelativePose:
    def test_same_pose_is_identity(self):
        rng = np.random.default_rng(6)
        t = random_pose(rng)
        rel = relative_pose(t, t)
        np.testing.assert_allclose(rel.matrix(), np.eye(4), atol=1e-12)

    def test_identity_base(self):
        rng = np.random.default_rng(7)
        t = random_pose(rng)
        rel = relative_pose(Pose.identity(), t)
        np.testing.assert_allclose(rel.matrix(), t.matrix(), atol=1e-15)

    def test_matrix_oracle(self):
        rng = np.random.default_rng(8)
        ti, tj = random_pose(rng), random_pose(rng)
        expected = np.linalg.inv(ti.matrix()) @ tj.matrix()
        np.testing.assert_allclose(relative_pose(ti, tj).matrix(), expected, atol=1e-12)

    def test_left_invariance(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            ti, tj, g = (random_pose(rng) for _ in range(3))
            a = relative_pose(ti, tj)
            b = relative_pose(g @ ti, g @ tj)
            np.testing.assert_allclose(a.matrix(), b.matrix(), atol=1e-9)


class TestUmeyama:
    def test_identity_on_equal_clouds(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(20, 3))
        g = umeyama_sim3(pts, pts)
        assert g.scale == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(g.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(g.translation, 0.0, atol=1e-9)

    def test_recovers_constructed_transform(self):
        rng = np.random.default_rng(11)
        src = rng.normal(size=(50, 3))
        g = Sim3(2.0, random_rotation(rng), rng.normal(size=3))
        dst = apply_sim3(g, src)
        rec = umeyama_sim3(src, dst)
        assert rec.scale == pytest.approx(2.0, rel=1e-12)
        res = apply_sim3(rec, src) - dst
        assert np.sqrt((res**2).sum(axis=1).mean()) < 1e-9

    def test_objective_not_improved_by_perturbation(self):
        rng = np.random.default_rng(12)
        src = rng.normal(size=(30, 3))
        dst = apply_sim3(Sim3(1.7, random_rotation(rng), rng.normal(size=3)), src)
        dst = dst + rng.normal(scale=0.05, size=dst.shape)
        rec = umeyama_sim3(src, dst)

        def objective(g):
            return float(((apply_sim3(g, src) - dst) ** 2).sum())

        base = objective(rec)
        for _ in range(30):
            s2 = rec.scale * (1.0 + rng.uniform(-0.01, 0.01))
            r2 = so3_exp(rng.normal(size=3) * 0.01) @ rec.rotation
            t2 = rec.translation * (1.0 + rng.uniform(-0.01, 0.01, size=3))
            assert objective(Sim3(s2, r2, t2)) >= base - 1e-9

    def test_collinear_rejected(self):
        t = np.linspace(0, 1, 10)
        src = np.outer(t, [1.0, 2.0, -1.0])
        dst = src + 1.0
        with pytest.raises(DegenerateInput, match="rank"):
            umeyama_sim3(src, dst)

    def test_rigid_only(self):
        rng = np.random.default_rng(13)
        src = rng.normal(size=(25, 3))
        pose = random_pose(rng)
        dst = pose.apply(src)
        rec = umeyama_sim3(src, dst, with_scale=False)
        assert rec.scale == 1.0
        res = apply_sim3(rec, src) - dst
        assert np.abs(res).max() < 1e-9


class TestApplySim3:
    def test_identity(self):
        rng = np.random.default_rng(14)
        pts = rng.normal(size=(7, 3))
        np.testing.assert_array_equal(apply_sim3(Sim3.identity(), pts), pts)

    def test_scale_only(self):
        g = Sim3(2.0, np.eye(3), np.zeros(3))
        np.testing.assert_allclose(apply_sim3(g, [[1.0, 0.0, 0.0]]), [[2.0, 0.0, 0.0]])

    def test_composition_oracle(self):
        rng = np.random.default_rng(15)
        g1 = Sim3(1.4, random_rotation(rng), rng.normal(size=3))
        g2 = Sim3(0.6, random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(11, 3))
        seq = apply_sim3(g1, apply_sim3(g2, pts))
        np.testing.assert_allclose(apply_sim3(g1 @ g2, pts), seq, atol=1e-12)

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(16)
        g = Sim3(3.0, random_rotation(rng), rng.normal(size=3))
        pts = rng.normal(size=(9, 3))
        np.testing.assert_allclose(apply_sim3(g.inverse(), apply_sim3(g, pts)), pts, atol=1e-12)


class TestUnproject:
    def test_unit_intrinsics(self):
        k = default_intrinsics(4)
        k2 = type(k)(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
        pm = unproject(np.ones((4, 4)), k2)
        u, v = 3, 2
        np.testing.assert_array_equal(pm[v, u], [u, v, 1.0])

    def test_principal_point(self):
        k = type(default_intrinsics())(fx=10, fy=10, cx=2, cy=1, width=4, height=4)
        pm = unproject(np.full((4, 4), 7.0), k)
        np.testing.assert_array_equal(pm[1, 2], [0.0, 0.0, 7.0])

    def test_z_channel_bit_exact(self):
        rng = np.random.default_rng(17)
        depth = rng.uniform(0.5, 3.0, size=(8, 8))
        pm = unproject(depth, default_intrinsics(8))
        np.testing.assert_array_equal(pm[:, :, 2], depth)

    def test_nonfinite_propagates(self):
        depth = np.array([[1.0, np.nan], [2.0, 3.0]])
        k = type(default_intrinsics())(fx=1, fy=1, cx=0, cy=0, width=2, height=2)
        pm = unproject(depth, k)
        assert np.isnan(pm[0, 1]).all()
        assert np.isfinite(pm[1, 1]).all()
