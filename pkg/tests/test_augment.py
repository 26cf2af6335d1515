import dataclasses

import numpy as np
import pytest

from humi.augment import (
    RandomizationDraw,
    SpeedSchedule,
    draw_randomization,
    sample_speed_schedule,
    shift_reset_time,
    time_warp,
    time_warp_joint,
)
from humi.geom import Pose, PoseTrajectory, resample


def oracle_truncated_normal_mean(mean, sigma, lo, hi, n, seed):
    """Brute-force rejection oracle, independent of the sampler under test."""
    rng = np.random.default_rng(seed)
    kept = []
    while len(kept) < n:
        draws = rng.normal(mean, sigma, size=n)
        kept.extend(d for d in draws if lo <= d <= hi)
    return float(np.mean(kept[:n]))


# frozen from the analytic truncated-normal mean:
# 1 + (phi(-0.75) - phi(0.25)) / (Phi(0.25) - Phi(-0.75))
TRUNC_MEAN_SIGMA1 = 0.77013


class TestSpeedSchedule:
    def test_degenerate_sigma_near_one(self):
        sched = sample_speed_schedule(10.0, 1e-6, seed=0)
        assert np.all(np.abs(sched.factors - 1.0) < 1e-4)

    def test_bounds_hold_for_many_draws(self):
        sched = sample_speed_schedule(100_000 * 0.02, 1.0, seed=1)
        assert len(sched.factors) == 100_000
        assert sched.factors.min() >= 0.25
        assert sched.factors.max() <= 1.25

    def test_mean_matches_rejection_oracle(self):
        sched = sample_speed_schedule(100_000 * 0.02, 1.0, seed=2)
        oracle = oracle_truncated_normal_mean(1.0, 1.0, 0.25, 1.25, 100_000, seed=999)
        assert abs(float(sched.factors.mean()) - oracle) < 0.01
        assert abs(float(sched.factors.mean()) - TRUNC_MEAN_SIGMA1) < 0.01

    def test_deterministic_per_seed(self):
        a = sample_speed_schedule(1.0, 0.7, seed=5)
        b = sample_speed_schedule(1.0, 0.7, seed=5)
        np.testing.assert_array_equal(a.factors, b.factors)

    def test_schedule_length(self):
        assert len(sample_speed_schedule(1.0, 0.5, seed=0).factors) == 50
        assert len(sample_speed_schedule(1.001, 0.5, seed=0).factors) == 51

    def test_out_of_bound_factors_rejected(self):
        with pytest.raises(ValueError):
            SpeedSchedule(0.02, np.array([1.0, 2.0]), 0.5)


def line_traj(duration=1.0, hz=50.0, speed=0.1):
    times = np.arange(0.0, duration + 1e-9, 1.0 / hz)
    poses = [Pose(np.array([speed * t, 0.0, 0.0]), np.array([1.0, 0, 0, 0])) for t in times]
    return PoseTrajectory.from_samples("f", zip(times, poses), rate_hint=hz)


class TestTimeWarp:
    def test_unit_speed_identity(self):
        traj = line_traj()
        sched = SpeedSchedule(0.02, np.ones(50), 0.0)
        out = time_warp(traj, sched)
        np.testing.assert_allclose(out.times, traj.times, atol=1e-12)
        np.testing.assert_allclose(out.translations, traj.translations, atol=1e-12)

    def test_half_speed_doubles_duration(self):
        traj = line_traj(duration=1.0)
        sched = SpeedSchedule(0.02, np.full(100, 0.5), 0.0)
        out = time_warp(traj, sched)
        assert out.end_time == pytest.approx(2.0, abs=0.02 + 1e-9)
        np.testing.assert_allclose(out.translations[-1], traj.translations[-1], atol=1e-9)

    def test_fast_speed_scales_linear_motion(self):
        traj = line_traj(duration=1.0, speed=0.1)
        sched = SpeedSchedule(0.02, np.full(50, 1.25), 0.0)
        out = time_warp(traj, sched)
        # position advances 1.25x faster in output time
        interior = out.times < 0.8 - 1e-9
        np.testing.assert_allclose(
            out.translations[interior, 0], 0.1 * 1.25 * out.times[interior], atol=1e-9
        )

    def test_schedule_too_short_rejected(self):
        traj = line_traj(duration=1.0)
        sched = SpeedSchedule(0.02, np.full(20, 0.5), 0.0)
        with pytest.raises(ValueError, match="shorter"):
            time_warp(traj, sched)

    def test_reparameterization_preserves_poses(self):
        rng = np.random.default_rng(3)
        hz = 100.0
        times = np.arange(0.0, 2.0 + 1e-9, 1 / hz)
        # band-limited smooth motion
        poses = [
            Pose(
                np.array([np.sin(1.3 * t), 0.2 * np.cos(0.7 * t), 0.1 * t]),
                np.array([np.cos(0.2 * t), 0.0, 0.0, np.sin(0.2 * t)]),
            )
            for t in times
        ]
        traj = PoseTrajectory.from_samples("f", zip(times, poses), rate_hint=hz)
        sched = sample_speed_schedule(10.0, 0.8, seed=11)
        out = time_warp(traj, sched)
        # invert the phase map: warped(t_out) == original(phi(t_out))
        phase = np.minimum(
            np.cumsum(np.concatenate([[0.0], [sched.factor_at(t) / hz for t in out.times[:-1]]])),
            2.0,
        )
        back = resample(traj, phase)
        np.testing.assert_allclose(out.translations, back.translations, atol=1e-6)

    def test_phase_strictly_increasing(self):
        sched = sample_speed_schedule(5.0, 1.0, seed=7)
        traj = line_traj(duration=1.0)
        out = time_warp(traj, sched)
        assert np.all(np.diff(out.times) > 0)

    def test_joint_trajectory_warp(self):
        from humi.robot import JointTrajectory

        times = np.arange(0.0, 1.0 + 1e-9, 0.02)
        q = np.linspace(0.0, 1.0, len(times))[:, None]
        traj = JointTrajectory(
            times,
            np.zeros((len(times), 3)),
            np.tile([1.0, 0, 0, 0], (len(times), 1)),
            q,
            ["j1"],
        )
        sched = SpeedSchedule(0.02, np.full(100, 0.5), 0.0)
        out = time_warp_joint(traj, sched)
        assert out.times[-1] == pytest.approx(2.0, abs=0.021)
        assert out.q[-1, 0] == pytest.approx(1.0, abs=1e-9)


class TestRandomizationDraw:
    def test_ranges_hold(self):
        rng = np.random.default_rng(0)
        lo_int, hi_int = np.inf, -np.inf
        for _ in range(10_000):
            d = draw_randomization(rng)
            assert 0.3 <= d.static_friction <= 1.6
            assert 0.3 <= d.dynamic_friction <= 1.2
            assert 0.3 <= d.restitution <= 1.2
            assert 0.0 <= d.default_joint_offset <= 0.5
            assert -0.025 <= d.com_offset[0] <= 0.025
            assert -0.05 <= d.com_offset[1] <= 0.05
            assert -0.05 <= d.com_offset[2] <= 0.05
            assert 0.75 <= d.ee_mass_scale <= 1.25
            assert 4.0 <= d.push_interval <= 6.0
            assert all(-0.5 <= v <= 0.5 for v in d.push_velocity_xy)
            assert -0.78 <= d.push_yaw_rate <= 0.78
            assert all(-0.05 <= v <= 0.05 for v in d.reset_position_xy)
            assert 0.0 <= d.reset_position_z <= 0.05
            assert all(-0.1 <= v <= 0.1 for v in d.reset_orientation_roll_pitch)
            assert -0.2 <= d.reset_orientation_yaw <= 0.2
            assert all(-0.05 <= v <= 0.05 for v in d.reset_linear_velocity_xy)
            assert -0.2 <= d.reset_linear_velocity_z <= 0.2
            assert all(-0.52 <= v <= 0.52 for v in d.reset_angular_velocity_roll_pitch)
            assert -0.78 <= d.reset_angular_velocity_yaw <= 0.78
            assert -0.1 <= d.reset_joint_offset <= 0.1
            assert -0.05 <= d.reset_time_shift <= 0.05
            lo_int = min(lo_int, d.push_interval)
            hi_int = max(hi_int, d.push_interval)
        # uniform order statistics: extremes hug the bounds at this sample size
        assert lo_int < 4.05
        assert hi_int > 5.95

    def test_same_seed_identical(self):
        assert draw_randomization(42) == draw_randomization(42)

    def test_round_trips_through_dict(self):
        d = draw_randomization(7)
        assert RandomizationDraw.from_dict(d.to_dict()) == d

    def test_field_count_matches_schema(self):
        assert len(dataclasses.fields(RandomizationDraw)) == 19


class TestShiftResetTime:
    def test_within_range(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            out = shift_reset_time(3.0, 10.0, rng)
            assert 2.95 <= out <= 3.05

    def test_clamped_at_zero(self):
        rng = np.random.default_rng(2)
        assert all(shift_reset_time(0.0, 10.0, rng) >= 0.0 for _ in range(200))

    def test_clamped_at_end(self):
        rng = np.random.default_rng(3)
        assert all(shift_reset_time(9.99, 10.0, rng) <= 10.0 for _ in range(200))

    def test_reproducible(self):
        assert shift_reset_time(1.0, 5.0, 123) == shift_reset_time(1.0, 5.0, 123)
