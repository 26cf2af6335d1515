"""Rigid-body (SE(3)) math shared by every other module.

Conventions (used throughout the package):
  - quaternions are unit, ordered (w, x, y, z)
  - frames are right-handed; units are meters, seconds, radians
  - a pose maps vectors from its own frame into its parent frame:
    ``p_parent = R * p_local + t``
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9
_WXYZ = ("w", "x", "y", "z")


def _as_vec3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite, got {arr}")
    return arr


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(q))
    if norm < 1e-12:
        raise ValueError("quaternion norm is zero")
    if abs(norm - 1.0) <= 1e-12:
        return q  # already unit: keep bits stable for round-tripping
    return q / norm


def _quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # v' = v + 2*u x (u x v + w*v), u = (x, y, z)
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def _quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        # first-order expansion keeps sign information for tiny rotations
        return _quat_normalize(np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]]))
    axis = rv / angle
    half = 0.5 * angle
    s = np.sin(half)
    return np.array([np.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def _quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    # shortest representative: angle in [0, pi]
    if q[0] < 0.0:
        q = -q
    sin_half = float(np.linalg.norm(q[1:]))
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(sin_half, float(q[0]))
    return (angle / sin_half) * q[1:]


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quat_slerp(a: np.ndarray, b: np.ndarray, u: float) -> np.ndarray:
    # shortest-arc blend; degrades to lerp when the quats are nearly aligned
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 1.0 - 1e-10:
        return _quat_normalize(a + u * (b - a))
    omega = np.arccos(np.clip(dot, -1.0, 1.0))
    so = np.sin(omega)
    return (np.sin((1.0 - u) * omega) / so) * a + (np.sin(u * omega) / so) * b


@dataclass(frozen=True)
class Pose:
    """A rigid transform: translation in meters plus a unit quaternion (w,x,y,z)."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = _as_vec3(self.translation, "translation")
        q = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        if q.shape != (4,):
            raise ValueError(f"rotation must be a quaternion (w,x,y,z), got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError(f"rotation must be finite, got {q}")
        q = _quat_normalize(q)
        t.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_rotvec(translation, rotvec) -> "Pose":
        return Pose(np.asarray(translation, dtype=np.float64), _quat_from_rotvec(_as_vec3(rotvec, "rotvec")))

    def inverse(self) -> "Pose":
        q_inv = _quat_conjugate(self.rotation)
        return Pose(-_quat_rotate(q_inv, self.translation), q_inv)

    def apply(self, point) -> np.ndarray:
        """Map a point from this pose's frame into its parent frame."""
        return _quat_rotate(self.rotation, _as_vec3(point, "point")) + self.translation

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation)

    def rotvec(self) -> np.ndarray:
        return _quat_to_rotvec(self.rotation)

    def almost_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            float(np.linalg.norm(self.translation - other.translation)) <= tol
            and rotation_error(self, other) <= tol
        )

    def to_dict(self) -> dict:
        return {"t": [float(v) for v in self.translation], "q": [float(v) for v in self.rotation]}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.asarray(d["t"], dtype=np.float64), np.asarray(d["q"], dtype=np.float64))


@dataclass(frozen=True)
class Twist:
    """Spatial velocity: linear in m/s, angular in rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = _as_vec3(self.linear, "linear")
        ang = _as_vec3(self.angular, "angular")
        lin.setflags(write=False)
        ang.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)


def compose(a: Pose, b: Pose) -> Pose:
    """Return a*b: b expressed in a's frame, mapped to a's parent frame."""
    return Pose(
        _quat_rotate(a.rotation, b.translation) + a.translation,
        _quat_multiply(a.rotation, b.rotation),
    )


def relative_pose(a: Pose, b: Pose) -> Pose:
    """Return a^-1 * b: pose of b expressed in a's frame."""
    return compose(a.inverse(), b)


def rotation_error(ref: Pose, actual: Pose) -> float:
    """Geodesic angle between the two rotations, in [0, pi].

    Invariant to quaternion sign flips on either argument and symmetric in
    its arguments.
    """
    q_rel = _quat_multiply(ref.rotation, _quat_conjugate(actual.rotation))
    sin_half = float(np.linalg.norm(q_rel[1:]))
    cos_half = abs(float(q_rel[0]))
    return 2.0 * np.arctan2(sin_half, cos_half)


def rotation_vector_error(ref: Pose, actual: Pose) -> np.ndarray:
    """World-frame rotation vector carrying `actual` onto `ref`.

    Shares the relative rotation with :func:`rotation_error`; its norm is the
    geodesic angle. This is the 3-vector residual the IK stacks.
    """
    q_rel = _quat_multiply(ref.rotation, _quat_conjugate(actual.rotation))
    return _quat_to_rotvec(q_rel)


def interpolate(a: Pose, b: Pose, u: float) -> Pose:
    """Blend two poses: linear on translation, shortest-arc slerp on rotation."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation fraction must be in [0, 1], got {u}")
    return Pose(
        (1.0 - u) * a.translation + u * b.translation,
        _quat_slerp(a.rotation, b.rotation, u),
    )


class TrajectoryRangeError(ValueError):
    """A requested time falls outside the trajectory's span."""


@dataclass
class PoseTrajectory:
    """Timestamped poses of one named frame.

    Samples are stored as parallel arrays; timestamps must be strictly
    increasing. ``rate_hint`` is the nominal capture rate in Hz.
    """

    frame_name: str
    times: np.ndarray
    translations: np.ndarray
    rotations: np.ndarray
    rate_hint: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4)
        n = len(self.times)
        if self.translations.shape[0] != n or self.rotations.shape[0] != n:
            raise ValueError("times, translations, and rotations must have equal length")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError(f"timestamps of '{self.frame_name}' must be strictly increasing")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm quaternion in trajectory")
        off_unit = np.abs(norms - 1.0) > 1e-12
        if np.any(off_unit):
            self.rotations = self.rotations.copy()
            self.rotations[off_unit] /= norms[off_unit, None]

    @staticmethod
    def from_samples(frame_name: str, samples, rate_hint: float = 0.0) -> "PoseTrajectory":
        """Build from an ordered iterable of (timestamp, Pose)."""
        samples = list(samples)
        times = np.array([s[0] for s in samples], dtype=np.float64)
        trans = np.array([s[1].translation for s in samples], dtype=np.float64).reshape(-1, 3)
        rots = np.array([s[1].rotation for s in samples], dtype=np.float64).reshape(-1, 4)
        return PoseTrajectory(frame_name, times, trans, rots, rate_hint)

    def __len__(self) -> int:
        return len(self.times)

    def pose_at_index(self, i: int) -> Pose:
        return Pose(self.translations[i], self.rotations[i])

    def samples(self):
        for i in range(len(self.times)):
            yield float(self.times[i]), self.pose_at_index(i)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def pose_at(self, t: float) -> Pose:
        """Interpolated pose at time t; raises outside the span."""
        if len(self.times) == 0:
            raise TrajectoryRangeError(f"trajectory '{self.frame_name}' is empty")
        t0, t1 = self.times[0], self.times[-1]
        if t < t0 - 1e-12 or t > t1 + 1e-12:
            raise TrajectoryRangeError(
                f"time {t} outside span [{t0}, {t1}] of trajectory '{self.frame_name}'"
            )
        t = min(max(t, t0), t1)
        j = int(np.searchsorted(self.times, t))
        if j < len(self.times) and abs(self.times[j] - t) <= 1e-12:
            return self.pose_at_index(j)
        lo, hi = j - 1, j
        u = (t - self.times[lo]) / (self.times[hi] - self.times[lo])
        return interpolate(self.pose_at_index(lo), self.pose_at_index(hi), float(u))


def resample(traj: PoseTrajectory, times) -> PoseTrajectory:
    """Interpolate the trajectory at the requested times (order preserved)."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if len(times) == 0:
        return PoseTrajectory(
            traj.frame_name, np.empty(0), np.empty((0, 3)), np.empty((0, 4)), traj.rate_hint
        )
    poses = [traj.pose_at(float(t)) for t in times]
    return PoseTrajectory(
        traj.frame_name,
        times,
        np.array([p.translation for p in poses]),
        np.array([p.rotation for p in poses]),
        traj.rate_hint,
    )


def finite_difference_twist(traj: PoseTrajectory, t: float) -> Twist:
    """Finite-difference spatial velocity at time t.

    Central difference across the neighbouring samples when t coincides with
    an interior sample; one-sided at the span boundaries; the bracketing
    segment's constant twist otherwise. Angular velocity comes from the log
    of the relative rotation divided by the time step.
    """
    n = len(traj.times)
    if n < 2:
        raise ValueError("finite_difference_twist needs at least 2 samples")
    t0, t1 = traj.start_time, traj.end_time
    if t < t0 - 1e-12 or t > t1 + 1e-12:
        raise TrajectoryRangeError(f"time {t} outside span [{t0}, {t1}]")
    t = min(max(t, t0), t1)
    j = int(np.searchsorted(traj.times, t))
    if j < n and abs(traj.times[j] - t) <= 1e-12:
        lo, hi = max(j - 1, 0), min(j + 1, n - 1)
    else:
        lo, hi = j - 1, j
    dt = float(traj.times[hi] - traj.times[lo])
    p_lo, p_hi = traj.pose_at_index(lo), traj.pose_at_index(hi)
    linear = (p_hi.translation - p_lo.translation) / dt
    angular = _quat_to_rotvec(_quat_multiply(p_hi.rotation, _quat_conjugate(p_lo.rotation))) / dt
    return Twist(linear, angular)


def speed_series(traj: PoseTrajectory, kind: str = "angular") -> tuple[np.ndarray, np.ndarray]:
    """Per-sample speed magnitudes (|v| or |w|) via finite differences.

    Returns (timestamps, magnitudes); used to derive gyro-like series from
    tracker trajectories for stream alignment.
    """
    n = len(traj.times)
    if n < 2:
        raise ValueError("speed_series needs at least 2 samples")
    mags = np.empty(n)
    for i in range(n):
        tw = finite_difference_twist(traj, float(traj.times[i]))
        mags[i] = np.linalg.norm(tw.angular if kind == "angular" else tw.linear)
    return traj.times.copy(), mags
