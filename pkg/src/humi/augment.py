"""Variable-speed augmentation and domain-randomization samplers.

Every sampler is a pure function of (parameters, random source): pass a
seed or a numpy Generator and the draw sequence is reproducible. The speed
factors come from a truncated normal via rejection, so their distribution
is exact rather than clipped.

The physical-randomization fields (friction, restitution, CoM, mass) are
sampled and serialized only; applying them to dynamics belongs to whatever
simulator trains on the packaged data.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geom import PoseTrajectory, resample
from .robot import JointTrajectory

SPEED_BOUNDS = (0.25, 1.25)
SPEED_MEAN = 1.0
SPEED_INTERVAL = 0.02  # s between speed re-draws
RESET_SHIFT_RANGE = (-0.05, 0.05)  # s


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SpeedSchedule:
    """Piecewise-constant playback-speed factors, one per `delta`-second slot."""

    delta: float
    factors: np.ndarray
    sigma: float

    def __post_init__(self):
        factors = np.asarray(self.factors, dtype=np.float64)
        if np.any(factors < SPEED_BOUNDS[0]) or np.any(factors > SPEED_BOUNDS[1]):
            raise ValueError(f"speed factors must lie in {SPEED_BOUNDS}")
        object.__setattr__(self, "factors", factors)

    @property
    def duration(self) -> float:
        """Output-time coverage of the schedule, seconds."""
        return len(self.factors) * self.delta

    def factor_at(self, t: float) -> float:
        idx = int(np.floor(t / self.delta + 1e-12))
        if idx < 0 or idx >= len(self.factors):
            raise IndexError(f"time {t} outside schedule coverage [0, {self.duration})")
        return float(self.factors[idx])


def sample_speed_schedule(duration: float, sigma: float, seed) -> SpeedSchedule:
    """One truncated-normal speed factor per 0.02 s slot covering `duration`.

    Draws come from N(1, sigma^2) restricted to [0.25, 1.25] by rejection
    (bounds inclusive), so the accepted distribution is the exact truncated
    normal. `sigma` normally comes from the training curriculum.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    rng = _rng(seed)
    n = int(np.ceil(duration / SPEED_INTERVAL - 1e-12))
    if sigma == 0.0:
        return SpeedSchedule(SPEED_INTERVAL, np.full(n, SPEED_MEAN), sigma)
    out = np.empty(n)
    filled = 0
    while filled < n:
        batch = rng.normal(SPEED_MEAN, sigma, size=max(n - filled, 64))
        accepted = batch[(batch >= SPEED_BOUNDS[0]) & (batch <= SPEED_BOUNDS[1])]
        take = min(len(accepted), n - filled)
        out[filled : filled + take] = accepted[:take]
        filled += take
    return SpeedSchedule(SPEED_INTERVAL, out, sigma)


def _warped_source_times(duration: float, dt: float, schedule: SpeedSchedule) -> tuple[np.ndarray, np.ndarray]:
    """Accumulate the playback phase until it covers `duration` of source time.

    Returns (output_times, source_times); raises if the schedule runs out
    before the phase reaches the end of the source.
    """
    out_times = [0.0]
    src_times = [0.0]
    phase = 0.0
    k = 0
    while phase < duration - 1e-12:
        t_out = k * dt
        idx = int(np.floor(t_out / schedule.delta + 1e-12))
        if idx >= len(schedule.factors):
            raise ValueError(
                f"speed schedule ({schedule.duration:.3f} s) shorter than the warped "
                f"trajectory needs (phase {phase:.3f}/{duration:.3f} at t={t_out:.3f})"
            )
        phase = min(phase + float(schedule.factors[idx]) * dt, duration)
        k += 1
        out_times.append(k * dt)
        src_times.append(phase)
    return np.asarray(out_times), np.asarray(src_times)


def _uniform_dt(times: np.ndarray, what: str) -> float:
    diffs = np.diff(times)
    if len(diffs) == 0:
        raise ValueError(f"{what} needs at least 2 samples")
    dt = float(np.median(diffs))
    if np.max(np.abs(diffs - dt)) > 1e-6:
        raise ValueError(f"{what} must be uniformly sampled for time warping")
    return dt


def time_warp(traj: PoseTrajectory, schedule: SpeedSchedule) -> PoseTrajectory:
    """Replay the trajectory at the schedule's varying speed.

    The reference phase advances as the integral of the piecewise-constant
    speed; the output is sampled on the input's own uniform clock. Factors
    below 1 stretch playback (a 0.5x schedule takes twice the source
    duration), factors above 1 compress it.
    """
    dt = _uniform_dt(traj.times, f"trajectory '{traj.frame_name}'")
    duration = traj.end_time - traj.start_time
    out_times, src_times = _warped_source_times(duration, dt, schedule)
    warped = resample(traj, traj.start_time + src_times)
    return PoseTrajectory(
        traj.frame_name,
        traj.start_time + out_times,
        warped.translations,
        warped.rotations,
        traj.rate_hint,
    )


def time_warp_joint(traj: JointTrajectory, schedule: SpeedSchedule) -> JointTrajectory:
    """Same warp applied to a whole-body joint trajectory (linear q blend)."""
    from .geom import Pose, interpolate

    dt = _uniform_dt(traj.times, "joint trajectory")
    duration = float(traj.times[-1] - traj.times[0])
    out_times, src_times = _warped_source_times(duration, dt, schedule)
    src_abs = traj.times[0] + src_times
    q = np.empty((len(src_abs), traj.q.shape[1]))
    base_t = np.empty((len(src_abs), 3))
    base_r = np.empty((len(src_abs), 4))
    for i, t in enumerate(src_abs):
        j = int(np.searchsorted(traj.times, t))
        if j < len(traj.times) and abs(traj.times[j] - t) <= 1e-12:
            q[i] = traj.q[j]
            base_t[i] = traj.base_translations[j]
            base_r[i] = traj.base_rotations[j]
            continue
        lo, hi = j - 1, j
        u = (t - traj.times[lo]) / (traj.times[hi] - traj.times[lo])
        q[i] = (1 - u) * traj.q[lo] + u * traj.q[hi]
        pose = interpolate(
            Pose(traj.base_translations[lo], traj.base_rotations[lo]),
            Pose(traj.base_translations[hi], traj.base_rotations[hi]),
            float(u),
        )
        base_t[i] = pose.translation
        base_r[i] = pose.rotation
    return JointTrajectory(traj.times[0] + out_times, base_t, base_r, q, list(traj.joint_names))


@dataclass(frozen=True)
class RandomizationDraw:
    """One sample of every randomization term used in controller training.

    Drawn in field order; serialize with to_dict for dataset manifests.
    """

    static_friction: float  # U[0.3, 1.6]
    dynamic_friction: float  # U[0.3, 1.2]
    restitution: float  # U[0.3, 1.2]
    default_joint_offset: float  # U[0.0, 0.5] rad added to default positions
    com_offset: tuple[float, float, float]  # x U[-0.025,0.025]; y,z U[-0.05,0.05] m
    ee_mass_scale: float  # U[0.75, 1.25]
    push_interval: float  # s between pushes, U[4, 6]
    push_velocity_xy: tuple[float, float]  # m/s, U[-0.5, 0.5]
    push_yaw_rate: float  # rad/s, U[-0.78, 0.78]
    reset_position_xy: tuple[float, float]  # m, U[-0.05, 0.05]
    reset_position_z: float  # m, U[0.0, 0.05]
    reset_orientation_roll_pitch: tuple[float, float]  # rad, U[-0.1, 0.1]
    reset_orientation_yaw: float  # rad, U[-0.2, 0.2]
    reset_linear_velocity_xy: tuple[float, float]  # m/s, U[-0.05, 0.05]
    reset_linear_velocity_z: float  # m/s, U[-0.2, 0.2]
    reset_angular_velocity_roll_pitch: tuple[float, float]  # rad/s, U[-0.52, 0.52]
    reset_angular_velocity_yaw: float  # rad/s, U[-0.78, 0.78]
    reset_joint_offset: float  # rad, U[-0.1, 0.1]
    reset_time_shift: float  # s, U[-0.05, 0.05]

    def to_dict(self) -> dict:
        def plain(v):
            return list(v) if isinstance(v, tuple) else float(v)

        return {k: plain(v) for k, v in self.__dict__.items()}

    @staticmethod
    def from_dict(d: dict) -> "RandomizationDraw":
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = tuple(v) if isinstance(v, list) else float(v)
        return RandomizationDraw(**kwargs)


def draw_randomization(seed) -> RandomizationDraw:
    """Independent uniform draws for every randomization term."""
    rng = _rng(seed)

    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    def u2(lo, hi):
        return (float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi)))

    return RandomizationDraw(
        static_friction=u(0.3, 1.6),
        dynamic_friction=u(0.3, 1.2),
        restitution=u(0.3, 1.2),
        default_joint_offset=u(0.0, 0.5),
        com_offset=(u(-0.025, 0.025), u(-0.05, 0.05), u(-0.05, 0.05)),
        ee_mass_scale=u(0.75, 1.25),
        push_interval=u(4.0, 6.0),
        push_velocity_xy=u2(-0.5, 0.5),
        push_yaw_rate=u(-0.78, 0.78),
        reset_position_xy=u2(-0.05, 0.05),
        reset_position_z=u(0.0, 0.05),
        reset_orientation_roll_pitch=u2(-0.1, 0.1),
        reset_orientation_yaw=u(-0.2, 0.2),
        reset_linear_velocity_xy=u2(-0.05, 0.05),
        reset_linear_velocity_z=u(-0.2, 0.2),
        reset_angular_velocity_roll_pitch=u2(-0.52, 0.52),
        reset_angular_velocity_yaw=u(-0.78, 0.78),
        reset_joint_offset=u(-0.1, 0.1),
        reset_time_shift=u(*RESET_SHIFT_RANGE),
    )


def shift_reset_time(t_reset: float, trajectory_end: float, seed) -> float:
    """Jitter an episode reset time by U[-0.05, 0.05] s, clamped to coverage."""
    if t_reset < 0:
        raise ValueError("t_reset must be >= 0")
    rng = _rng(seed)
    shifted = t_reset + float(rng.uniform(*RESET_SHIFT_RANGE))
    return float(min(max(shifted, 0.0), trajectory_end))
