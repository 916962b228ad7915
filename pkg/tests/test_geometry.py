import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from poseadv.errors import GimbalLockError, InvalidPoseError
from poseadv.geometry import (
    EulerPose,
    TransformSE3,
    compose,
    euler_to_rotation,
    inverse,
    relative_transform,
    rotation_error,
    rotation_to_euler,
    translation_error,
    wrap_angle,
)


def random_pose(rng, max_angle=math.pi - 1e-3):
    # keep pitch clear of the gimbal region
    return EulerPose(
        *(rng.uniform(-5, 5, 3)),
        roll=rng.uniform(-max_angle, max_angle),
        pitch=rng.uniform(-math.pi / 2 + 2e-3, math.pi / 2 - 2e-3),
        yaw=rng.uniform(-max_angle, max_angle),
    )


class TestEulerPose:
    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidPoseError):
            EulerPose(0, 0, float("nan"), 0, 0, 0)
        with pytest.raises(InvalidPoseError):
            EulerPose(0, 0, 0, 0, float("inf"), 0)

    def test_angle_range_enforced(self):
        with pytest.raises(InvalidPoseError):
            EulerPose(0, 0, 0, 0, 0, math.pi)
        EulerPose(0, 0, 0, 0, 0, -math.pi)  # closed on the left

    def test_from_vector_wraps(self):
        p = EulerPose.from_vector([0, 0, 0, 3 * math.pi / 2, 0, -math.pi])
        assert p.roll == pytest.approx(-math.pi / 2)
        assert p.yaw == -math.pi

    def test_wrap_angle(self):
        assert wrap_angle(math.pi) == -math.pi
        assert wrap_angle(-math.pi) == -math.pi
        assert wrap_angle(0.3) == pytest.approx(0.3)
        assert wrap_angle(2 * math.pi + 0.1) == pytest.approx(0.1)


class TestEulerToRotation:
    def test_identity(self):
        t = euler_to_rotation(EulerPose(0, 0, 0, 0, 0, 0))
        assert np.array_equal(t.r, np.eye(3))
        assert np.array_equal(t.t, np.zeros(3))

    def test_quarter_yaw_maps_x_to_y(self):
        t = euler_to_rotation(EulerPose(0, 0, 0, 0, 0, math.pi / 2))
        assert np.abs(t.r @ [1, 0, 0] - [0, 1, 0]).max() < 1e-12

    def test_matches_elementary_product(self):
        # oracle: the three elementary matrices written out by hand
        roll, pitch, yaw = 0.1, 0.2, 0.3
        cr, sr = math.cos(roll), math.sin(roll)
        cp, sp = math.cos(pitch), math.sin(pitch)
        cy, sy = math.cos(yaw), math.sin(yaw)
        rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        t = euler_to_rotation(EulerPose(1, 2, 3, roll, pitch, yaw))
        assert np.abs(t.r - rz @ ry @ rx).max() < 1e-15
        assert np.array_equal(t.t, [1, 2, 3])

    def test_matches_scipy_intrinsic_zyx(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = random_pose(rng)
            expected = Rotation.from_euler("ZYX", [p.yaw, p.pitch, p.roll]).as_matrix()
            assert np.abs(euler_to_rotation(p).r - expected).max() < 1e-12

    def test_orthonormality_property(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            t = euler_to_rotation(random_pose(rng))
            assert np.abs(t.r.T @ t.r - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(t.r) - 1.0) < 1e-9


class TestRotationToEuler:
    def test_identity(self):
        p = rotation_to_euler(TransformSE3.identity())
        assert p.as_vector().tolist() == [0.0] * 6

    def test_pure_yaw(self):
        t = euler_to_rotation(EulerPose(0, 0, 0, 0, 0, 0.3))
        p = rotation_to_euler(t)
        assert p.yaw == pytest.approx(0.3, abs=1e-12)
        assert p.roll == pytest.approx(0.0, abs=1e-12)
        assert p.pitch == pytest.approx(0.0, abs=1e-12)

    def test_round_trip_fixed_point(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            p = random_pose(rng)
            t = euler_to_rotation(p)
            back = euler_to_rotation(rotation_to_euler(t))
            assert np.abs(back.r - t.r).max() < 1e-8
            assert np.abs(back.t - t.t).max() < 1e-8

    def test_gimbal_lock_flagged(self):
        t = euler_to_rotation(EulerPose(0, 0, 0, 0.2, math.pi / 2 - 1e-9, 0.1))
        with pytest.raises(GimbalLockError):
            rotation_to_euler(t)


class TestComposeInverse:
    def test_compose_identity(self):
        rng = np.random.default_rng(5)
        t = euler_to_rotation(random_pose(rng))
        assert compose(t, TransformSE3.identity()).allclose(t, 0)

    def test_compose_with_inverse(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            t = euler_to_rotation(random_pose(rng))
            assert compose(t, inverse(t)).allclose(TransformSE3.identity(), 1e-9)

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = euler_to_rotation(random_pose(rng))
            b = euler_to_rotation(random_pose(rng))
            expected = a.matrix() @ b.matrix()
            assert np.abs(compose(a, b).matrix() - expected).max() < 1e-12

    def test_inverse_identity(self):
        assert inverse(TransformSE3.identity()).allclose(TransformSE3.identity(), 0)

    def test_inverse_pure_translation(self):
        t = TransformSE3(np.eye(3), [1, 2, 3])
        assert np.array_equal(inverse(t).t, [-1, -2, -3])


class TestRelativeTransform:
    def test_same_transform_gives_identity(self):
        t = euler_to_rotation(EulerPose(1, 2, 3, 0.1, 0.2, 0.3))
        rel = relative_transform(t, t)
        assert rel.allclose(TransformSE3.identity(), 1e-12)

    def test_from_identity_gives_target(self):
        tgt = euler_to_rotation(EulerPose(1, 2, 3, 0.1, 0.2, 0.3))
        assert relative_transform(TransformSE3.identity(), tgt).allclose(tgt, 0)

    def test_reconstruction(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            t = euler_to_rotation(random_pose(rng))
            tgt = euler_to_rotation(random_pose(rng))
            rel = relative_transform(t, tgt)
            assert compose(t, rel).allclose(tgt, 1e-9)


class TestErrorFunctionals:
    def test_identity_rotation_error_zero(self):
        assert rotation_error(TransformSE3.identity()) == 0.0

    def test_yaw_half_radian(self):
        # oracle: axis-angle magnitude via quaternion
        t = euler_to_rotation(EulerPose(0, 0, 0, 0, 0, 0.5))
        expected = np.linalg.norm(Rotation.from_matrix(t.r).as_rotvec())
        assert expected == pytest.approx(0.5, abs=1e-12)
        assert rotation_error(t) == pytest.approx(expected, abs=1e-9)

    def test_pi_rotation(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            r = Rotation.from_rotvec(math.pi * axis).as_matrix()
            # trace of a pi rotation is -1, so the clamped arccos gives pi
            assert np.trace(r) == pytest.approx(-1.0, abs=1e-12)
            assert rotation_error(TransformSE3(r, np.zeros(3))) == pytest.approx(
                math.pi, abs=1e-6
            )

    def test_rotation_error_matches_quaternion_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            t = euler_to_rotation(random_pose(rng))
            expected = np.linalg.norm(Rotation.from_matrix(t.r).as_rotvec())
            assert rotation_error(t) == pytest.approx(expected, abs=1e-7)

    def test_translation_error_zero(self):
        assert translation_error(TransformSE3.identity()) == 0.0

    def test_translation_error_pythagorean(self):
        t = TransformSE3(np.eye(3), [3, 4, 0])
        assert translation_error(t) == 5.0

    def test_translation_error_matches_fsum_oracle(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            v = rng.normal(size=3) * 10
            expected = math.sqrt(math.fsum(float(x) * float(x) for x in v))
            t = TransformSE3(np.eye(3), v)
            assert translation_error(t) == pytest.approx(expected, rel=1e-14)


class TestInvariants:
    def test_self_relative_errors_exactly_zero(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            t = euler_to_rotation(random_pose(rng))
            rel = relative_transform(t, t)
            assert rotation_error(rel) == 0.0
            assert translation_error(rel) == 0.0

    def test_rotation_error_conjugation_invariant(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            t = euler_to_rotation(random_pose(rng))
            q = euler_to_rotation(random_pose(rng)).r
            conj = TransformSE3(q @ t.r @ q.T, t.t)
            assert abs(rotation_error(conj) - rotation_error(t)) < 1e-9

    def test_invalid_rotation_rejected(self):
        with pytest.raises(InvalidPoseError):
            TransformSE3(np.eye(3) * 1.001, np.zeros(3))
        with pytest.raises(InvalidPoseError):
            TransformSE3(-np.eye(3), np.zeros(3))  # det -1
