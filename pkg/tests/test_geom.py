import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from humi.geom import (
    Pose,
    PoseTrajectory,
    TrajectoryRangeError,
    Twist,
    compose,
    finite_difference_twist,
    interpolate,
    relative_pose,
    resample,
    rotation_error,
    rotation_vector_error,
)


def rand_pose(rng):
    q = rng.normal(size=4)
    return Pose(rng.normal(size=3), q / np.linalg.norm(q))


def rz(angle):
    return Pose(np.zeros(3), np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)]))


unit_quats = st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
    lambda q: np.linalg.norm(q) > 1e-3
)
vec3 = st.tuples(*[st.floats(-10, 10) for _ in range(3)])


class TestPose:
    def test_identity_compose(self):
        rng = np.random.default_rng(0)
        p = rand_pose(rng)
        assert compose(Pose.identity(), p).almost_equal(p)
        assert compose(p, Pose.identity()).almost_equal(p)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = rand_pose(rng)
            assert compose(p, p.inverse()).almost_equal(Pose.identity(), tol=1e-9)

    def test_translate_then_rotate_point(self):
        # Tx(1m) * Rz(90deg) applied to (1,0,0): rotation sends it to (0,1,0),
        # translation shifts to (1,1,0)
        p = compose(Pose(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0])), rz(np.pi / 2))
        np.testing.assert_allclose(p.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-12)

    def test_quaternion_stays_normalized(self):
        rng = np.random.default_rng(2)
        p = rand_pose(rng)
        for _ in range(200):
            p = compose(p, rand_pose(rng))
        assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9

    @given(st.lists(unit_quats, min_size=3, max_size=3), st.lists(vec3, min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_compose_associative(self, quats, trans):
        a, b, c = (Pose(np.array(t), np.array(q)) for t, q in zip(trans, quats))
        lhs = compose(compose(a, b), c)
        rhs = compose(a, compose(b, c))
        assert lhs.almost_equal(rhs, tol=1e-9)

    def test_relative_pose(self):
        rng = np.random.default_rng(3)
        a, b = rand_pose(rng), rand_pose(rng)
        assert compose(a, relative_pose(a, b)).almost_equal(b, tol=1e-9)


class TestRotationError:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(4)
        p = rand_pose(rng)
        assert rotation_error(p, p) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_turn(self):
        assert rotation_error(Pose.identity(), rz(np.pi / 2)) == pytest.approx(np.pi / 2, abs=1e-12)

    def test_antipodal_quats_are_zero(self):
        q = np.array([0.3, 0.5, -0.2, 0.78])
        q = q / np.linalg.norm(q)
        a = Pose(np.zeros(3), q)
        b = Pose(np.zeros(3), -q)
        assert rotation_error(a, b) == pytest.approx(0.0, abs=1e-12)

    @given(unit_quats, unit_quats)
    @settings(max_examples=100, deadline=None)
    def test_symmetry_and_sign_invariance(self, qa, qb):
        a = Pose(np.zeros(3), np.array(qa))
        b = Pose(np.zeros(3), np.array(qb))
        a_neg = Pose(np.zeros(3), -np.array(qa))
        e = rotation_error(a, b)
        assert 0.0 <= e <= np.pi + 1e-12
        assert e == pytest.approx(rotation_error(b, a), abs=1e-12)
        assert e == pytest.approx(rotation_error(a_neg, b), abs=1e-12)

    def test_rotation_vector_matches_angle(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a, b = rand_pose(rng), rand_pose(rng)
            rv = rotation_vector_error(a, b)
            assert np.linalg.norm(rv) == pytest.approx(rotation_error(a, b), abs=1e-9)


class TestInterpolate:
    def test_endpoints(self):
        rng = np.random.default_rng(6)
        a, b = rand_pose(rng), rand_pose(rng)
        assert interpolate(a, b, 0.0).almost_equal(a)
        assert interpolate(a, b, 1.0).almost_equal(b)

    def test_slerp_midpoint_single_axis(self):
        mid = interpolate(Pose.identity(), rz(np.pi / 2), 0.5)
        assert mid.almost_equal(rz(np.pi / 4), tol=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            interpolate(Pose.identity(), Pose.identity(), 1.5)
        with pytest.raises(ValueError):
            interpolate(Pose.identity(), Pose.identity(), -0.1)


def line_trajectory(frame="f", n=11, speed=0.2, duration=1.0):
    times = np.linspace(0.0, duration, n)
    poses = [Pose(np.array([speed * t, 0.0, 0.0]), np.array([1.0, 0, 0, 0])) for t in times]
    return PoseTrajectory.from_samples(frame, zip(times, poses), rate_hint=(n - 1) / duration)


class TestResample:
    def test_identity_on_source_times(self):
        traj = line_trajectory()
        out = resample(traj, traj.times)
        np.testing.assert_allclose(out.translations, traj.translations, atol=1e-12)
        np.testing.assert_allclose(out.times, traj.times)

    def test_midpoint_matches_interpolate(self):
        a = Pose(np.zeros(3), np.array([1.0, 0, 0, 0]))
        b = Pose(np.array([1.0, 0, 0]), np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)]))
        traj = PoseTrajectory.from_samples("f", [(0.0, a), (1.0, b)])
        out = resample(traj, [0.5])
        assert out.pose_at_index(0).almost_equal(interpolate(a, b, 0.5), tol=1e-12)

    def test_empty_times(self):
        out = resample(line_trajectory(), [])
        assert len(out) == 0

    def test_extrapolation_rejected_with_time_in_message(self):
        with pytest.raises(TrajectoryRangeError, match="2.5"):
            resample(line_trajectory(), [2.5])

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        times = np.sort(rng.uniform(0, 10, size=15))
        times += np.arange(15) * 1e-3  # enforce strict increase
        traj = PoseTrajectory.from_samples(
            "f", [(t, rand_pose(rng)) for t in times]
        )
        out = resample(resample(traj, times), times)
        np.testing.assert_allclose(out.translations, traj.translations, atol=1e-9)
        for i in range(len(times)):
            assert out.pose_at_index(i).almost_equal(traj.pose_at_index(i), tol=1e-9)


class TestFiniteDifferenceTwist:
    def test_constant_trajectory_zero_twist(self):
        p = Pose(np.array([0.3, -0.2, 1.0]), np.array([0.7, 0.1, 0.5, 0.2]))
        traj = PoseTrajectory.from_samples("f", [(0.1 * i, p) for i in range(11)])
        tw = finite_difference_twist(traj, 0.5)
        np.testing.assert_allclose(tw.linear, 0.0, atol=1e-12)
        np.testing.assert_allclose(tw.angular, 0.0, atol=1e-12)

    def test_uniform_line(self):
        traj = line_trajectory(speed=0.2, duration=1.0)
        tw = finite_difference_twist(traj, 0.5)
        np.testing.assert_allclose(tw.linear, [0.2, 0.0, 0.0], atol=1e-12)

    def test_pure_spin(self):
        times = np.linspace(0.0, 1.0, 51)
        traj = PoseTrajectory.from_samples("f", [(t, rz(t)) for t in times])
        tw = finite_difference_twist(traj, 0.5)
        np.testing.assert_allclose(tw.angular, [0.0, 0.0, 1.0], atol=1e-9)
        np.testing.assert_allclose(tw.linear, 0.0, atol=1e-12)

    def test_boundary_one_sided(self):
        traj = line_trajectory(speed=0.2)
        tw0 = finite_difference_twist(traj, traj.start_time)
        tw1 = finite_difference_twist(traj, traj.end_time)
        np.testing.assert_allclose(tw0.linear, [0.2, 0, 0], atol=1e-12)
        np.testing.assert_allclose(tw1.linear, [0.2, 0, 0], atol=1e-12)

    def test_outside_span_rejected(self):
        with pytest.raises(TrajectoryRangeError):
            finite_difference_twist(line_trajectory(), 5.0)


class TestValidation:
    def test_non_increasing_timestamps_rejected(self):
        p = Pose.identity()
        with pytest.raises(ValueError, match="strictly increasing"):
            PoseTrajectory.from_samples("f", [(0.0, p), (0.0, p)])

    def test_twist_requires_finite(self):
        with pytest.raises(ValueError):
            Twist(np.array([np.inf, 0, 0]), np.zeros(3))

    def test_pose_is_immutable(self):
        p = Pose.identity()
        with pytest.raises((ValueError, RuntimeError)):
            p.translation[0] = 1.0
