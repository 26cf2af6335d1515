"""Receding-horizon action-chunk interface between the policy levels.

A policy emits chunks of *relative* keypoint waypoints; anchoring them to a
reference pose makes them executable. The reference can be the previous
chunk's last scheduled target (smooth chaining that ignores tracking error)
or the currently executed pose (which replays the tracking error as a
boundary jump). Blind keypoints (pelvis, feet) are commanded purely through
within-chunk reference deltas so estimation drift cannot enter the command
stream.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geom import (
    Pose,
    PoseTrajectory,
    compose,
    relative_pose,
    rotation_error,
    _quat_conjugate,
    _quat_multiply,
    _quat_to_rotvec,
)

CONTROL_DT = 1.0 / 50.0  # low-level control period, seconds
COMMAND_HORIZON_S = 2.0
COMMAND_WAYPOINTS = 10
POLICY_WAYPOINT_DT = 1.0 / 20.0  # high-level action period
POLICY_ACTION_HORIZON = 48


class ReferenceMode(enum.Enum):
    """How the next chunk is anchored to the world."""

    TARGET_POSE = "target"  # previous chunk's last scheduled waypoint
    EXECUTED_POSE = "executed"  # measured pose at switch time


@dataclass(frozen=True)
class ChunkPlan:
    """Policy output before anchoring: relative waypoints per keypoint."""

    issued_at: int  # control step index
    relative_waypoints: Mapping[str, tuple[Pose, ...]]
    gripper_widths: Mapping[str, tuple[float, ...]]
    waypoint_dt: float = POLICY_WAYPOINT_DT

    def to_record(self) -> dict:
        return {
            "issued_at": self.issued_at,
            "waypoint_dt": self.waypoint_dt,
            "relative": {k: [p.to_dict() for p in wps] for k, wps in self.relative_waypoints.items()},
            "widths": {k: list(w) for k, w in self.gripper_widths.items()},
        }

    @staticmethod
    def from_record(rec: dict) -> "ChunkPlan":
        return ChunkPlan(
            issued_at=int(rec["issued_at"]),
            relative_waypoints={
                k: tuple(Pose.from_dict(p) for p in wps) for k, wps in rec["relative"].items()
            },
            gripper_widths={k: tuple(float(v) for v in w) for k, w in rec.get("widths", {}).items()},
            waypoint_dt=float(rec.get("waypoint_dt", POLICY_WAYPOINT_DT)),
        )


@dataclass(frozen=True)
class CommandChunk:
    """An anchored chunk: absolute waypoints derived from reference * relative."""

    issued_at: int
    reference_pose: Mapping[str, Pose]
    relative_waypoints: Mapping[str, tuple[Pose, ...]]
    gripper_widths: Mapping[str, tuple[float, ...]]
    absolute_waypoints: Mapping[str, tuple[Pose, ...]]
    waypoint_dt: float = POLICY_WAYPOINT_DT

    def keypoints(self) -> list[str]:
        return list(self.relative_waypoints)

    def waypoint_count(self) -> int:
        return len(next(iter(self.relative_waypoints.values())))


def compose_chunk(
    relative_waypoints: Mapping[str, Sequence[Pose]],
    reference: Mapping[str, Pose],
    issued_at: int,
    gripper_widths: Mapping[str, Sequence[float]] | None = None,
    waypoint_dt: float = POLICY_WAYPOINT_DT,
) -> CommandChunk:
    """Anchor relative waypoints: absolute[k][i] = reference[k] * relative[k][i]."""
    if not relative_waypoints or any(len(w) == 0 for w in relative_waypoints.values()):
        raise ValueError("chunk needs at least one waypoint per keypoint")
    absolute = {}
    for name, waypoints in relative_waypoints.items():
        if name not in reference:
            raise KeyError(f"keypoint {name!r} has waypoints but no reference pose")
        anchor = reference[name]
        absolute[name] = tuple(compose(anchor, wp) for wp in waypoints)
    return CommandChunk(
        issued_at=issued_at,
        reference_pose=dict(reference),
        relative_waypoints={k: tuple(v) for k, v in relative_waypoints.items()},
        gripper_widths={k: tuple(v) for k, v in (gripper_widths or {}).items()},
        absolute_waypoints=absolute,
        waypoint_dt=waypoint_dt,
    )


def anchor_plan(
    plan: ChunkPlan,
    mode: ReferenceMode,
    previous: CommandChunk | None,
    executed: Mapping[str, Pose],
) -> CommandChunk:
    """Anchor a policy plan using the configured reference mode."""
    reference = next_reference(mode, previous, executed)
    return compose_chunk(
        plan.relative_waypoints, reference, plan.issued_at, plan.gripper_widths, plan.waypoint_dt
    )


def next_reference(
    mode: ReferenceMode,
    previous: CommandChunk | None,
    executed: Mapping[str, Pose],
) -> dict[str, Pose]:
    """Reference poses anchoring the next chunk.

    TARGET_POSE ignores the executed poses entirely and chains from the
    previous chunk's last scheduled waypoint; EXECUTED_POSE re-anchors on
    the measured poses. The very first chunk has no previous target, so both
    modes bootstrap from the executed poses.
    """
    if previous is None:
        return dict(executed)
    if mode is ReferenceMode.EXECUTED_POSE:
        return dict(executed)
    return {name: waypoints[-1] for name, waypoints in previous.absolute_waypoints.items()}


def boundary_discontinuity(
    prev: CommandChunk, next_chunk: CommandChunk
) -> dict[str, tuple[float, float]]:
    """Pose jump between prev's last scheduled waypoint and next's first.

    This is the quantity that separates the two anchoring modes: target-pose
    chaining drives it to zero while executed-pose anchoring replays the
    tracking error as a jump.
    """
    if next_chunk.issued_at < prev.issued_at:
        raise ValueError("next chunk must follow the previous chunk")
    out = {}
    for name in prev.absolute_waypoints:
        if name not in next_chunk.absolute_waypoints:
            continue
        last = prev.absolute_waypoints[name][-1]
        first = next_chunk.absolute_waypoints[name][0]
        out[name] = (
            float(np.linalg.norm(last.translation - first.translation)),
            rotation_error(last, first),
        )
    return out


def sample_schedule(
    t: int,
    horizon_s: float = COMMAND_HORIZON_S,
    count: int = COMMAND_WAYPOINTS,
    control_dt: float = CONTROL_DT,
) -> list[int]:
    """Waypoint step indices: t + k*dt for k=1..count, dt = floor(h/(n*delta))."""
    if horizon_s <= 0 or count <= 0 or control_dt <= 0:
        raise ValueError("horizon, count, and control_dt must be positive")
    step = int(math.floor(horizon_s / (count * control_dt)))
    if step <= 0:
        raise ValueError("horizon too short for the requested waypoint count")
    return [t + k * step for k in range(1, count + 1)]


@dataclass(frozen=True)
class EeWaypoint:
    """Localized reference pose plus deltas from the measured pose."""

    position: np.ndarray  # reference, localization frame
    orientation: np.ndarray  # rotation vector, localization frame
    position_delta: np.ndarray  # reference - measured
    orientation_delta: np.ndarray  # rotation vector measured -> reference


@dataclass(frozen=True)
class BlindWaypoint:
    """Reference-only within-chunk delta; no measured pose enters."""

    position_delta: np.ndarray
    orientation_delta: np.ndarray


@dataclass(frozen=True)
class StudentCommand:
    ee: Mapping[str, tuple[EeWaypoint, ...]]
    blind: Mapping[str, tuple[BlindWaypoint, ...]]
    schedule: tuple[int, ...]


def localization_frame(pelvis_pose: Pose) -> Pose:
    """Yaw-only projection of the pelvis pose, used to localize EE commands."""
    w, x, y, z = pelvis_pose.rotation
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    half = 0.5 * yaw
    return Pose(pelvis_pose.translation, np.array([math.cos(half), 0.0, 0.0, math.sin(half)]))


def _rotvec_between_quats(q_to: np.ndarray, q_from: np.ndarray) -> np.ndarray:
    return _quat_to_rotvec(_quat_multiply(q_to, _quat_conjugate(q_from)))


def build_student_command(
    ee_refs: Mapping[str, PoseTrajectory],
    blind_refs: Mapping[str, PoseTrajectory],
    measured: Mapping[str, Pose],
    t: int,
    localization: Pose,
    horizon_s: float = COMMAND_HORIZON_S,
    count: int = COMMAND_WAYPOINTS,
    control_dt: float = CONTROL_DT,
) -> StudentCommand:
    """Assemble the low-level command for control step t.

    End-effector entries carry the reference pose expressed in the
    localization frame plus deltas against the current measured pose (the
    only causal measurement available at command time). Blind entries are
    deltas between the reference at each waypoint and the reference now;
    translating the whole world moves nothing in them.
    """
    schedule = sample_schedule(t, horizon_s, count, control_dt)
    t_now = t * control_dt
    loc_inv = localization.inverse()

    ee_out: dict[str, tuple[EeWaypoint, ...]] = {}
    for name, traj in ee_refs.items():
        if name not in measured:
            raise KeyError(f"end-effector {name!r} has no measured pose")
        meas_loc = compose(loc_inv, measured[name])
        entries = []
        for step in schedule:
            ref_loc = compose(loc_inv, traj.pose_at(step * control_dt))
            entries.append(
                EeWaypoint(
                    position=ref_loc.translation,
                    orientation=ref_loc.rotvec(),
                    position_delta=ref_loc.translation - meas_loc.translation,
                    orientation_delta=_rotvec_between_quats(ref_loc.rotation, meas_loc.rotation),
                )
            )
        ee_out[name] = tuple(entries)

    blind_out: dict[str, tuple[BlindWaypoint, ...]] = {}
    for name, traj in blind_refs.items():
        now = traj.pose_at(t_now)
        entries = []
        for step in schedule:
            ref_k = traj.pose_at(step * control_dt)
            entries.append(
                BlindWaypoint(
                    position_delta=ref_k.translation - now.translation,
                    orientation_delta=_rotvec_between_quats(ref_k.rotation, now.rotation),
                )
            )
        blind_out[name] = tuple(entries)

    return StudentCommand(ee=ee_out, blind=blind_out, schedule=tuple(schedule))


def scripted_chunk_stream(
    refs: Mapping[str, PoseTrajectory],
    waypoint_count: int = POLICY_ACTION_HORIZON,
    waypoint_dt: float = POLICY_WAYPOINT_DT,
    control_dt: float = CONTROL_DT,
) -> list[ChunkPlan]:
    """Replay reference trajectories as a chunk stream (stands in for a policy).

    Each chunk's relative waypoints start at identity and follow the
    reference's own motion: rel_i = ref(t0)^-1 * ref(t0 + i*dt). Chunks are
    issued at the time of the previous chunk's last waypoint so that, under
    target-pose anchoring with perfect chaining, consecutive chunks meet
    exactly.
    """
    if waypoint_count < 2:
        raise ValueError("waypoint_count must be >= 2")
    start = max(traj.start_time for traj in refs.values())
    end = min(traj.end_time for traj in refs.values())
    if end <= start:
        raise ValueError("reference trajectories share no time span")
    chunk_span = (waypoint_count - 1) * waypoint_dt
    plans = []
    t0 = start
    while end - t0 > 1e-9:
        horizon = min(chunk_span, end - t0)
        n = int(np.floor(horizon / waypoint_dt + 1e-9)) + 1
        if n < 2:
            break  # remainder shorter than one waypoint interval
        times = np.minimum(t0 + np.arange(n) * waypoint_dt, end)
        relative = {}
        for name, traj in refs.items():
            anchor = traj.pose_at(float(t0))
            relative[name] = tuple(relative_pose(anchor, traj.pose_at(float(tk))) for tk in times)
        plans.append(
            ChunkPlan(
                issued_at=int(round((t0 - start) / control_dt)),
                relative_waypoints=relative,
                gripper_widths={},
                waypoint_dt=waypoint_dt,
            )
        )
        t0 = float(times[-1])
    return plans
