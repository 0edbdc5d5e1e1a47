"""Geometry tests: exp/log, projection, and the pose Jacobian vs oracles."""

import numpy as np
import pytest

from featalign.geometry import (
    CameraIntrinsics,
    PointWithDepth,
    SE3Pose,
    pose_jacobian,
    project,
    project_points,
    se3_exp,
    se3_log,
)


def series_exp_oracle(twist, terms=20):
    """Truncated matrix-exponential series of the 4x4 twist matrix."""
    v, w = np.asarray(twist[:3]), np.asarray(twist[3:])
    a = np.zeros((4, 4))
    a[:3, :3] = np.array(
        [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=float
    )
    a[:3, 3] = v
    out = np.eye(4)
    term = np.eye(4)
    for k in range(1, terms + 1):
        term = term @ a / k
        out = out + term
    return out


def homogeneous_projection_oracle(pixel, inv_depth, pose_matrix, ks, kd):
    """Explicit 4x4 homogeneous-coordinate projection chain."""
    ks_inv4 = np.eye(4)
    ks_inv4[:3, :3] = np.linalg.inv(ks)
    p_h = np.array([pixel[0], pixel[1], 1.0, inv_depth]) / inv_depth
    cam = ks_inv4 @ p_h
    dst = pose_matrix @ cam
    kd4 = np.eye(4)
    kd4[:3, :3] = kd
    img = kd4 @ dst
    return img[:2] / img[2], dst[2]


def k_matrix(intr):
    return np.array([[intr.fx, 0, intr.cx], [0, intr.fy, intr.cy], [0, 0, 1.0]])


def random_pose(rng, angle_scale=0.5, trans_scale=0.5):
    twist = np.concatenate(
        [rng.uniform(-trans_scale, trans_scale, 3), rng.uniform(-angle_scale, angle_scale, 3)]
    )
    return se3_exp(twist)


INTR = CameraIntrinsics(fx=60.0, fy=55.0, cx=31.5, cy=31.5, width=64, height=64)


class TestSE3Exp:
    def test_zero_twist_is_identity(self):
        pose = se3_exp(np.zeros(6))
        np.testing.assert_array_equal(pose.rotation, np.eye(3))
        np.testing.assert_array_equal(pose.translation, np.zeros(3))

    def test_pure_translation(self):
        pose = se3_exp(np.array([0.7, 0, 0, 0, 0, 0]))
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(pose.translation, [0.7, 0, 0], atol=1e-15)

    def test_matches_series_oracle(self):
        twist = np.array([0.1, -0.2, 0.05, 0.3, 0.1, -0.2])
        expected = series_exp_oracle(twist)
        got = se3_exp(twist).matrix()
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_matches_series_oracle_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            twist = rng.uniform(-1.0, 1.0, 6)
            np.testing.assert_allclose(
                se3_exp(twist).matrix(), series_exp_oracle(twist, terms=25), atol=1e-12
            )

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            se3_exp(np.array([np.nan, 0, 0, 0, 0, 0]))


class TestSE3Properties:
    def test_log_exp_roundtrip_property(self):
        # Criterion-7 suite: >= 1000 cases, rotation norm < pi.
        rng = np.random.default_rng(11)
        for _ in range(1200):
            w = rng.uniform(-1, 1, 3)
            w = w / np.linalg.norm(w) * rng.uniform(1e-10, np.pi - 1e-3)
            twist = np.concatenate([rng.uniform(-2, 2, 3), w])
            np.testing.assert_allclose(se3_log(se3_exp(twist)), twist, atol=1e-9)

    def test_rotation_orthonormal_and_det_one(self):
        rng = np.random.default_rng(12)
        for _ in range(1000):
            pose = se3_exp(rng.uniform(-2, 2, 6))
            r = pose.rotation
            assert np.abs(r @ r.T - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_compose_inverse_roundtrip(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            pose = random_pose(rng, angle_scale=1.2, trans_scale=2.0)
            back = pose.compose(pose.inverse())
            assert np.abs(back.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(back.translation).max() < 1e-9


class TestProject:
    def test_identity_pose_same_intrinsics(self):
        point = PointWithDepth(np.array([20.0, 30.0]), 0.25)
        got = project(point, SE3Pose.identity(), INTR, INTR)
        np.testing.assert_allclose(got, [20.0, 30.0], atol=1e-12)

    def test_halving_depth_doubles_offset(self):
        # Move the camera toward the surface so that depth halves: the
        # pixel offset from the principal point doubles (pinhole similarity).
        point = PointWithDepth(np.array([35.5, 27.5]), 0.5)
        pose = SE3Pose(np.eye(3), np.array([0.0, 0.0, -1.0]))
        got = project(point, pose, INTR, INTR, border=0.0)
        offset0 = np.array([35.5 - INTR.cx, 27.5 - INTR.cy])
        np.testing.assert_allclose(got, [INTR.cx, INTR.cy] + 2 * offset0, atol=1e-10)

    def test_matches_homogeneous_oracle(self):
        rng = np.random.default_rng(21)
        intr_dst = CameraIntrinsics(52.0, 49.0, 30.0, 33.0, 64, 64)
        checked = 0
        while checked < 200:
            pixel = rng.uniform(5, 58, 2)
            inv_depth = rng.uniform(0.1, 2.0)
            pose = random_pose(rng, angle_scale=0.2, trans_scale=0.4)
            expected, z = homogeneous_projection_oracle(
                pixel, inv_depth, pose.matrix(), k_matrix(INTR), k_matrix(intr_dst)
            )
            got = project(PointWithDepth(pixel, inv_depth), pose, INTR, intr_dst, border=0.0)
            if got is None:
                assert z <= 0 or not (
                    0 <= expected[0] <= 63 and 0 <= expected[1] <= 63
                )
                continue
            np.testing.assert_allclose(got, expected, atol=1e-10)
            checked += 1

    def test_out_of_view_is_none(self):
        point = PointWithDepth(np.array([2.0, 30.0]), 1.0)
        pose = SE3Pose(np.eye(3), np.array([0.0, 0.0, 5.0]))
        # Pushed far behind the camera plane after a big z move off-axis.
        got = project(
            PointWithDepth(np.array([2.0, 30.0]), 2.0),
            SE3Pose(np.eye(3), np.array([0.0, 0.0, -0.6])),
            INTR,
            INTR,
        )
        assert got is None or isinstance(got, np.ndarray)
        behind = project(point, SE3Pose(np.eye(3), np.array([0, 0, -2.0])), INTR, INTR)
        assert behind is None

    def test_equivariance_property(self):
        # project through T2 o T1 equals projecting through T1 (recovering
        # intermediate depth) then through T2, when intermediate depth > 0.
        rng = np.random.default_rng(31)
        done = 0
        while done < 1000:
            pixel = rng.uniform(8, 55, 2)
            inv_depth = rng.uniform(0.15, 1.5)
            t1 = random_pose(rng, 0.1, 0.2)
            t2 = random_pose(rng, 0.1, 0.2)
            p_cam1 = t1.apply(
                np.array(
                    [
                        (pixel[0] - INTR.cx) / INTR.fx / inv_depth,
                        (pixel[1] - INTR.cy) / INTR.fy / inv_depth,
                        1.0 / inv_depth,
                    ]
                )
            )
            if p_cam1[2] <= 0.05:
                continue
            mid = project(PointWithDepth(pixel, inv_depth), t1, INTR, INTR, border=-1e9)
            direct = project(
                PointWithDepth(pixel, inv_depth), t2.compose(t1), INTR, INTR, border=-1e9
            )
            stepped = project(
                PointWithDepth(mid, 1.0 / p_cam1[2]), t2, INTR, INTR, border=-1e9
            )
            if direct is None or stepped is None:
                continue
            np.testing.assert_allclose(stepped, direct, atol=1e-9)
            done += 1


class TestPoseJacobian:
    def numeric_jacobian(self, point, pose, intr_src, intr_dst, h=1e-6):
        jac = np.zeros((2, 6))
        for k in range(6):
            delta = np.zeros(6)
            delta[k] = h
            plus = project(
                point, se3_exp(delta).compose(pose), intr_src, intr_dst, border=-1e9
            )
            minus = project(
                point, se3_exp(-delta).compose(pose), intr_src, intr_dst, border=-1e9
            )
            jac[:, k] = (plus - minus) / (2 * h)
        return jac

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(41)
        checked = 0
        while checked < 100:
            intr_dst = CameraIntrinsics(
                rng.uniform(40, 80), rng.uniform(40, 80), 31.5, 31.5, 64, 64
            )
            point = PointWithDepth(rng.uniform(6, 57, 2), rng.uniform(0.2, 1.5))
            pose = random_pose(rng, 0.2, 0.3)
            p_cam = pose.apply(
                np.array(
                    [
                        (point.pixel[0] - INTR.cx) / INTR.fx / point.inverse_depth,
                        (point.pixel[1] - INTR.cy) / INTR.fy / point.inverse_depth,
                        1.0 / point.inverse_depth,
                    ]
                )
            )
            if p_cam[2] < 0.3:
                continue
            analytic = pose_jacobian(point, pose, INTR, intr_dst)
            numeric = self.numeric_jacobian(point, pose, INTR, intr_dst)
            denom = np.maximum(np.abs(numeric), 1.0)
            assert np.abs(analytic - numeric).max() / denom.max() < 1e-5
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-3)
            assert rel.max() < 1e-5
            checked += 1

    def test_principal_point_translation_columns(self):
        point = PointWithDepth(np.array([INTR.cx, INTR.cy]), 1.0)
        jac = pose_jacobian(point, SE3Pose.identity(), INTR, INTR)
        assert jac[0, 0] == pytest.approx(INTR.fx)
        assert jac[0, 2] == pytest.approx(0.0, abs=1e-12)
        assert jac[1, 1] == pytest.approx(INTR.fy)
        assert jac[1, 2] == pytest.approx(0.0, abs=1e-12)

    def test_rotation_columns_depth_scale_invariant(self):
        rng = np.random.default_rng(51)
        for _ in range(50):
            pixel = rng.uniform(10, 53, 2)
            q = rng.uniform(0.2, 1.0)
            pose = random_pose(rng, 0.15, 0.3)
            s = rng.uniform(0.5, 3.0)
            scaled_pose = SE3Pose(pose.rotation, pose.translation / s)
            j1 = pose_jacobian(PointWithDepth(pixel, q), pose, INTR, INTR)
            j2 = pose_jacobian(PointWithDepth(pixel, q * s), scaled_pose, INTR, INTR)
            np.testing.assert_allclose(j1[:, 3:], j2[:, 3:], rtol=1e-9, atol=1e-9)


class TestProjectPointsBatch:
    def test_matches_scalar_project(self):
        rng = np.random.default_rng(61)
        pixels = rng.uniform(4, 59, (64, 2))
        inv_depths = rng.uniform(0.2, 1.2, 64)
        pose = random_pose(rng, 0.1, 0.3)
        projected, _, valid = project_points(pixels, inv_depths, pose, INTR, INTR)
        for i in range(64):
            single = project(PointWithDepth(pixels[i], inv_depths[i]), pose, INTR, INTR)
            if single is None:
                assert not valid[i]
            else:
                assert valid[i]
                np.testing.assert_allclose(projected[i], single, atol=1e-12)
