import numpy as np
import pytest

from feedsim.geometry import (PoseSE3, Twist6, UnitQuaternion, pose_delta,
                              pose_interpolate, slerp, transform_point)


def random_quat(rng):
    return UnitQuaternion(rng.normal(size=4))


def random_pose(rng, scale=1.0):
    return PoseSE3(rng.normal(size=3) * scale, random_quat(rng))


class TestUnitQuaternion:
    def test_normalized_on_construction(self):
        q = UnitQuaternion(np.array([2.0, 0.0, 0.0, 0.0]))
        assert abs(np.linalg.norm(q.wxyz) - 1.0) < 1e-12

    def test_rotate_matches_matrix(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            q = random_quat(rng)
            p = rng.normal(size=3)
            assert np.allclose(q.rotate(p), q.to_matrix() @ p, atol=1e-12)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            q = random_quat(rng)
            r = q.compose(q.inverse())
            assert r.angle_to(UnitQuaternion.identity()) < 1e-9

    def test_double_cover_comparison(self):
        q = UnitQuaternion.from_axis_angle([0, 0, 1], 0.7)
        neg = UnitQuaternion(-q.wxyz)
        assert q.angle_to(neg) < 1e-12

    def test_rotvec_round_trip(self):
        # round trip is identity only on the shortest-arc domain (angle < pi)
        rng = np.random.default_rng(3)
        for _ in range(50):
            v = rng.normal(size=3)
            v *= rng.uniform(0, 0.99) * np.pi / np.linalg.norm(v)
            q = UnitQuaternion.from_rotvec(v)
            assert np.allclose(q.to_rotvec(), v, atol=1e-9)

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            q = random_quat(rng)
            r = UnitQuaternion.from_matrix(q.to_matrix())
            assert q.angle_to(r) < 1e-9

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            UnitQuaternion(np.array([np.nan, 0, 0, 0]))


class TestSlerp:
    def test_identical_endpoints(self):
        q = UnitQuaternion.from_axis_angle([1, 2, 3], 0.9)
        assert slerp(q, q, 0.5).angle_to(q) < 1e-12

    def test_endpoint_identity(self):
        rng = np.random.default_rng(5)
        q0, q1 = random_quat(rng), random_quat(rng)
        assert slerp(q0, q1, 0.0).angle_to(q0) < 1e-12
        assert slerp(q0, q1, 1.0).angle_to(q1) < 1e-12

    def test_halfway_ninety_about_z(self):
        q0 = UnitQuaternion.identity()
        q1 = UnitQuaternion.from_axis_angle([0, 0, 1], np.pi / 2)
        mid = slerp(q0, q1, 0.5)
        expect = UnitQuaternion.from_axis_angle([0, 0, 1], np.pi / 4)
        assert mid.angle_to(expect) < 1e-12

    def test_unit_norm_property(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            q0, q1 = random_quat(rng), random_quat(rng)
            t = rng.uniform()
            assert abs(np.linalg.norm(slerp(q0, q1, t).wxyz) - 1.0) < 1e-9

    def test_shortest_path_branch(self):
        q0 = UnitQuaternion.from_axis_angle([0, 0, 1], 0.1)
        q1 = UnitQuaternion(-UnitQuaternion.from_axis_angle([0, 0, 1], 0.2).wxyz)
        mid = slerp(q0, q1, 0.5)
        expect = UnitQuaternion.from_axis_angle([0, 0, 1], 0.15)
        assert mid.angle_to(expect) < 1e-9

    def test_constant_angular_velocity(self):
        rng = np.random.default_rng(7)
        q0, q1 = random_quat(rng), random_quat(rng)
        angles = [slerp(q0, q1, t).angle_to(q0) for t in (0.25, 0.5, 0.75)]
        total = q0.angle_to(q1)
        assert np.allclose(angles, [0.25 * total, 0.5 * total, 0.75 * total], atol=1e-9)

    def test_invalid_fraction(self):
        q = UnitQuaternion.identity()
        with pytest.raises(ValueError):
            slerp(q, q, 1.5)
        with pytest.raises(ValueError):
            slerp(q, q, float("nan"))


class TestPose:
    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            p = random_pose(rng)
            ident = p.compose(p.inverse())
            assert np.linalg.norm(ident.position) < 1e-9
            assert ident.orientation.angle_to(UnitQuaternion.identity()) < 1e-9

    def test_compose_associative(self):
        rng = np.random.default_rng(9)
        a, b, c = (random_pose(rng) for _ in range(3))
        lhs = a.compose(b).compose(c)
        rhs = a.compose(b.compose(c))
        assert np.allclose(lhs.position, rhs.position, atol=1e-12)
        assert lhs.orientation.angle_to(rhs.orientation) < 1e-9

    def test_transform_identity(self):
        p = np.array([1.0, 2.0, 3.0])
        assert np.allclose(transform_point(PoseSE3.identity(), p), p)

    def test_transform_translation(self):
        frame = PoseSE3(np.array([0.0, 0.0, 0.1]))
        assert np.allclose(transform_point(frame, [0, 0, 0]), [0, 0, 0.1])

    def test_transform_rot_then_translate(self):
        # 90 deg about z then translate (1,0,0): p=(1,0,0) -> R p = (0,1,0), + t = (1,1,0)
        frame = PoseSE3(np.array([1.0, 0.0, 0.0]),
                        UnitQuaternion.from_axis_angle([0, 0, 1], np.pi / 2))
        assert np.allclose(transform_point(frame, [1, 0, 0]), [1, 1, 0], atol=1e-12)

    def test_transform_compose_property(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            a, b = random_pose(rng), random_pose(rng)
            p = rng.normal(size=3)
            lhs = transform_point(a.compose(b), p)
            rhs = transform_point(a, transform_point(b, p))
            assert np.allclose(lhs, rhs, atol=1e-9)


class TestPoseInterpolate:
    def test_t0_is_start(self):
        rng = np.random.default_rng(11)
        start, goal = random_pose(rng), random_pose(rng)
        out = pose_interpolate(start, goal, 0.0)
        assert np.allclose(out.position, start.position)
        assert out.orientation.angle_to(start.orientation) < 1e-12

    def test_linear_position(self):
        start = PoseSE3(np.zeros(3))
        goal = PoseSE3(np.array([0.1, 0.0, 0.0]))
        out = pose_interpolate(start, goal, 0.25)
        assert np.allclose(out.position, [0.025, 0, 0], atol=1e-15)

    def test_midpoint_is_mean(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            start, goal = random_pose(rng), random_pose(rng)
            out = pose_interpolate(start, goal, 0.5)
            assert np.allclose(out.position, 0.5 * (start.position + goal.position),
                               atol=1e-12)

    def test_monotone_angular_distance(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            start, goal = random_pose(rng), random_pose(rng)
            prev = -1.0
            for t in np.linspace(0, 1, 11):
                d = pose_interpolate(start, goal, t).orientation.angle_to(start.orientation)
                assert d >= prev - 1e-9
                prev = d


class TestTwist:
    def test_zero_twist_identity(self):
        rng = np.random.default_rng(14)
        p = random_pose(rng)
        out = Twist6.zero().apply_to(p)
        assert np.allclose(out.position, p.position)
        assert out.orientation.angle_to(p.orientation) < 1e-12

    def test_pose_delta_round_trip(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            cur, tgt = random_pose(rng), random_pose(rng)
            tw = pose_delta(tgt, cur)
            out = tw.apply_to(cur)
            assert np.allclose(out.position, tgt.position, atol=1e-12)
            assert out.orientation.angle_to(tgt.orientation) < 1e-9
