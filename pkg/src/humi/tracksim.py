"""Purely kinematic tracking simulator.

A first-order pursuit follower with configurable gain, latency, noise, and
blind-keypoint drift stands in for the learned low-level controller: the
anchoring geometry it exposes (chunk-boundary jumps, open-loop drift of
blind keypoints) is a property of the command interface, not of any
particular tracker. Defaults are tuned so a constant-velocity fixture shows
a 4-6 cm steady-state lag.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .chunk import (
    ChunkPlan,
    CommandChunk,
    ReferenceMode,
    anchor_plan,
    boundary_discontinuity,
)
from .geom import (
    Pose,
    PoseTrajectory,
    interpolate,
    relative_pose,
    rotation_error,
    _quat_from_rotvec,
    _quat_multiply,
)

CONTROL_DT = 1.0 / 50.0


@dataclass(frozen=True)
class TrackerModel:
    """First-order pursuit follower parameters.

    gain*dt >= 1 snaps to the (latency-delayed) target; the default gain
    produces the few-centimeter steady-state lag regime on a 0.25 m/s
    fixture (0.25/5 = 5 cm).
    """

    gain: float = 5.0  # 1/s
    latency: float = 0.0  # s
    noise_std: tuple[float, float] = (0.0, 0.0)  # (m, rad) per step
    drift_rate: float = 0.0  # m/s, applied along +z to blind keypoints
    dt: float = CONTROL_DT
    blind_keypoints: tuple[str, ...] = ()

    def __post_init__(self):
        if self.gain <= 0:
            # zero gain is modelled by alpha=0 in step(); forbid negatives only
            if self.gain < 0:
                raise ValueError("gain must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


def step(
    state: Mapping[str, Pose],
    target: Mapping[str, Pose],
    model: TrackerModel,
    rng: np.random.Generator,
) -> dict[str, Pose]:
    """One control tick of the pursuit follower.

    Pose update: alpha = min(gain*dt, 1) of the way to the target (linear
    blend on translation, shortest-arc on rotation), plus seeded noise,
    plus drift_rate*dt (+z) on blind keypoints. Latency is handled by the
    episode loop, which feeds a delayed target.
    """
    alpha = min(model.gain * model.dt, 1.0)
    pos_std, rot_std = model.noise_std
    out = {}
    for name, current in state.items():
        tgt = target.get(name)
        new = current if tgt is None or alpha == 0.0 else interpolate(current, tgt, alpha)
        t = new.translation.copy()
        q = new.rotation
        if pos_std > 0:
            t = t + rng.normal(0.0, pos_std, size=3)
        if rot_std > 0:
            q = _quat_multiply(_quat_from_rotvec(rng.normal(0.0, rot_std, size=3)), q)
        if model.drift_rate != 0.0 and name in model.blind_keypoints:
            t = t + np.array([0.0, 0.0, model.drift_rate * model.dt])
        out[name] = Pose(t, q)
    return out


@dataclass
class EpisodeMetrics:
    """Aggregates from one simulated episode."""

    steps: int = 0
    mean_position_error: dict[str, float] = field(default_factory=dict)
    max_position_error: dict[str, float] = field(default_factory=dict)
    mean_rotation_error: dict[str, float] = field(default_factory=dict)
    max_rotation_error: dict[str, float] = field(default_factory=dict)
    # one entry per chunk boundary: keypoint -> (m, rad)
    boundary_discontinuities: list[dict[str, tuple[float, float]]] = field(default_factory=list)
    blind_drift: dict[str, float] = field(default_factory=dict)

    def max_boundary_position_jump(self) -> float:
        jumps = [
            m for boundary in self.boundary_discontinuities for (m, _) in boundary.values()
        ]
        return max(jumps) if jumps else 0.0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "mean_position_error": dict(self.mean_position_error),
            "max_position_error": dict(self.max_position_error),
            "mean_rotation_error": dict(self.mean_rotation_error),
            "max_rotation_error": dict(self.max_rotation_error),
            "boundary_discontinuities": [
                {k: [v[0], v[1]] for k, v in boundary.items()}
                for boundary in self.boundary_discontinuities
            ],
            "blind_drift": dict(self.blind_drift),
        }


def _target_at(chunk: CommandChunk, keypoint: str, local_time: float) -> Pose:
    waypoints = chunk.absolute_waypoints[keypoint]
    span = (len(waypoints) - 1) * chunk.waypoint_dt
    if local_time <= 0:
        return waypoints[0]
    if local_time >= span:
        return waypoints[-1]
    idx = min(int(local_time / chunk.waypoint_dt), len(waypoints) - 2)
    u = (local_time - idx * chunk.waypoint_dt) / chunk.waypoint_dt
    u = min(max(float(u), 0.0), 1.0)
    return interpolate(waypoints[idx], waypoints[idx + 1], u)


def run_episode(
    plans: Sequence[ChunkPlan],
    mode: ReferenceMode,
    model: TrackerModel,
    seed,
    initial: Mapping[str, Pose],
) -> EpisodeMetrics:
    """Drive the follower through an anchored chunk stream at 50 Hz.

    Each plan is anchored via next_reference under the chosen mode, executed
    waypoint-by-waypoint (interpolated at the control rate), and the metrics
    record per-keypoint tracking error against the commanded target plus the
    pose jump at every chunk boundary.
    """
    if not plans:
        raise ValueError("empty chunk stream")
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    state = dict(initial)
    prev_chunk: CommandChunk | None = None
    delay_steps = int(round(model.latency / model.dt))
    target_history: list[dict[str, Pose]] = []

    sums_p: dict[str, float] = {}
    sums_r: dict[str, float] = {}
    maxs_p: dict[str, float] = {}
    maxs_r: dict[str, float] = {}
    count = 0
    metrics = EpisodeMetrics()
    last_target: dict[str, Pose] = {}

    for plan in plans:
        chunk = anchor_plan(plan, mode, prev_chunk, state)
        if prev_chunk is not None:
            metrics.boundary_discontinuities.append(boundary_discontinuity(prev_chunk, chunk))
        span = (chunk.waypoint_count() - 1) * chunk.waypoint_dt
        n_steps = max(1, int(math.ceil(span / model.dt - 1e-9)))
        for j in range(1, n_steps + 1):
            local = min(j * model.dt, span)
            target = {name: _target_at(chunk, name, local) for name in chunk.keypoints()}
            target_history.append(target)
            delayed = target_history[max(0, len(target_history) - 1 - delay_steps)]
            state = step(state, delayed, model, rng)
            count += 1
            for name in target:
                e_p = float(np.linalg.norm(target[name].translation - state[name].translation))
                e_r = rotation_error(target[name], state[name])
                sums_p[name] = sums_p.get(name, 0.0) + e_p
                sums_r[name] = sums_r.get(name, 0.0) + e_r
                maxs_p[name] = max(maxs_p.get(name, 0.0), e_p)
                maxs_r[name] = max(maxs_r.get(name, 0.0), e_r)
        last_target = {name: _target_at(chunk, name, span) for name in chunk.keypoints()}
        prev_chunk = chunk

    metrics.steps = count
    metrics.mean_position_error = {k: v / count for k, v in sums_p.items()}
    metrics.mean_rotation_error = {k: v / count for k, v in sums_r.items()}
    metrics.max_position_error = maxs_p
    metrics.max_rotation_error = maxs_r
    metrics.blind_drift = {
        name: float(np.linalg.norm(last_target[name].translation - state[name].translation))
        for name in model.blind_keypoints
        if name in last_target
    }
    return metrics


@dataclass
class DriftResult:
    """Outcome of a blind-keypoint drift experiment for one command style."""

    style: str  # "absolute" | "relative"
    times: np.ndarray
    target_errors: np.ndarray  # commanded-target deviation from the true reference, m
    final_error: float
    command_records: list[dict]

    def command_bytes(self) -> bytes:
        return json.dumps(self.command_records, sort_keys=True).encode()


def drift_experiment(
    blind_ref: PoseTrajectory,
    drift_rate: float,
    style: str,
    chunk_seconds: float = 2.0,
    waypoints_per_chunk: int = 10,
    dt: float = CONTROL_DT,
) -> DriftResult:
    """Measure how estimator drift corrupts blind-keypoint commands.

    The pose estimate of a blind keypoint wanders as drift_rate * t along
    +z. "absolute" commands carry world-frame targets anchored on that
    estimate, so the commanded target walks away from the true reference
    without bound (final error ~ drift_rate * duration). "relative" commands
    carry within-chunk reference deltas that never read the estimate, so the
    command stream is byte-identical under any drift.
    """
    if drift_rate < 0:
        raise ValueError("drift_rate must be >= 0")
    if style not in ("absolute", "relative"):
        raise ValueError("style must be 'absolute' or 'relative'")
    t0, t1 = blind_ref.start_time, blind_ref.end_time
    n = int(round((t1 - t0) / dt))
    times = t0 + np.arange(n + 1) * dt
    times = np.minimum(times, t1)
    wp_spacing = chunk_seconds / waypoints_per_chunk

    records: list[dict] = []
    errors = np.zeros(len(times))
    if style == "absolute":
        for i, t in enumerate(times):
            ref = blind_ref.pose_at(float(t))
            drift = drift_rate * (t - t0)
            target = np.array([ref.translation[0], ref.translation[1], ref.translation[2] + drift])
            records.append(
                {
                    "step": i,
                    "target_position": [round(v, 12) for v in target],
                    "target_rotation": [round(float(v), 12) for v in ref.rotation],
                }
            )
            errors[i] = drift
    else:
        chunk_start = t0
        while chunk_start < t1 - 1e-9:
            anchor = blind_ref.pose_at(float(chunk_start))
            deltas = []
            for k in range(1, waypoints_per_chunk + 1):
                tk = min(chunk_start + k * wp_spacing, t1)
                rel = relative_pose(anchor, blind_ref.pose_at(float(tk)))
                deltas.append(
                    {
                        "position_delta": [round(float(v), 12) for v in rel.translation],
                        "rotation_delta": [round(float(v), 12) for v in rel.rotation],
                    }
                )
            records.append(
                {"chunk_start": round(float(chunk_start - t0), 9), "waypoints": deltas}
            )
            chunk_start += chunk_seconds
        # relative commands define no absolute target; their deviation from
        # the reference is identically zero by construction
    return DriftResult(
        style=style,
        times=times,
        target_errors=errors,
        final_error=float(errors[-1]),
        command_records=records,
    )
