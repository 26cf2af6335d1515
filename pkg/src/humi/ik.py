"""Differential whole-body inverse kinematics.

One damped-least-squares solver serves both batch retargeting of recorded
keypoint trajectories and the interactive preview service. Each update
stacks three weighted row blocks: keypoint pose tracking (position +
rotation-vector residuals), posture regularization toward a rest
configuration, and soft sphere-pair repulsion that activates inside a
clearance margin. Infeasibility is reported through flags, never raised:
the solver always returns its best state.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .geom import (
    Pose,
    PoseTrajectory,
    _quat_conjugate,
    _quat_multiply,
    _quat_rotate,
    _quat_to_rotvec,
)
from .robot import (
    JointState,
    JointTrajectory,
    KinematicModel,
    _fk_raw,
    apply_dof_delta,
    collision_distances,
)

DEFAULT_TOL = (1e-3, 1e-2)  # meters, radians
DEFAULT_MAX_ITERS = 200
PREVIEW_TICK_ITERS = 5
# joints are clamped strictly inside their bounds so converged states never
# sit on the open-interval boundary
_LIMIT_EPS = 1e-6


def _weight_for(weights, name: str) -> float:
    if isinstance(weights, Mapping):
        return float(weights.get(name, weights.get("default", 0.0)))
    return float(weights)


@dataclass
class IkTaskWeights:
    """Subtask weights for the stacked IK solve.

    position/rotation may be a scalar applied to every keyframe or a mapping
    keyframe -> weight (key "default" supplies the fallback).
    """

    position: float | Mapping[str, float] = 1.0
    rotation: float | Mapping[str, float] = 0.5
    # gentle tie-break only: large posture weights bias the task fixed point
    posture: float = 0.002
    collision: float = 1.0
    damping: float = 1e-4
    max_step: float = 0.5
    collision_margin: float = 0.02
    lock_base: bool = False

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if self.max_step <= 0:
            raise ValueError("max_step must be > 0")
        for name, value in (("posture", self.posture), ("collision", self.collision)):
            if value < 0:
                raise ValueError(f"{name} weight must be >= 0")

    def position_weight(self, keyframe: str) -> float:
        return _weight_for(self.position, keyframe)

    def rotation_weight(self, keyframe: str) -> float:
        return _weight_for(self.rotation, keyframe)


@dataclass
class IkTargets:
    """World-frame (unscaled) keypoint targets plus the tie-breaking posture."""

    targets: dict[str, Pose]
    rest_posture: JointState | None = None

    def validate(self, model: KinematicModel):
        for name in self.targets:
            if name not in model.keyframes:
                raise KeyError(f"target keyframe {name!r} not in model")


@dataclass
class IkSolution:
    state: JointState
    residuals: dict[str, tuple[float, float]]  # keyframe -> (position m, rotation rad)
    collision_flags: list[tuple[int, int]]
    limit_flags: list[str]
    converged: bool
    iterations: int


@dataclass
class FeasibilityReport:
    """Per-frame flags from a batch trajectory solve."""

    frames: int = 0
    not_converged: list[int] = field(default_factory=list)
    collisions: list[int] = field(default_factory=list)
    limit_saturated: list[int] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (self.not_converged or self.collisions)

    def flagged_frames(self) -> set[int]:
        return set(self.not_converged) | set(self.collisions) | set(self.limit_saturated)

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "not_converged": list(self.not_converged),
            "collisions": list(self.collisions),
            "limit_saturated": list(self.limit_saturated),
        }


def scale_pelvis_height(targets: IkTargets, human_height: float, robot_height: float) -> IkTargets:
    """Scale only the pelvis target's height by robot_height/human_height.

    Every other component of every target is returned bit-identical; scaling
    anything else would break the spatial alignment between the robot and
    the physical scene.
    """
    if human_height <= 0 or robot_height <= 0:
        raise ValueError("heights must be positive")
    ratio = robot_height / human_height
    out = dict(targets.targets)
    pelvis = out.get("pelvis")
    if pelvis is not None:
        t = pelvis.translation
        out["pelvis"] = Pose(np.array([t[0], t[1], t[2] * ratio]), pelvis.rotation)
    return IkTargets(out, targets.rest_posture)


def scale_pelvis_height_trajectory(
    traj: PoseTrajectory, human_height: float, robot_height: float
) -> PoseTrajectory:
    """Per-sample pelvis-height scaling for batch retargeting."""
    if human_height <= 0 or robot_height <= 0:
        raise ValueError("heights must be positive")
    ratio = robot_height / human_height
    translations = traj.translations.copy()
    translations[:, 2] *= ratio
    return PoseTrajectory(traj.frame_name, traj.times.copy(), translations, traj.rotations.copy(), traj.rate_hint)


def _rotvec_between(q_target: np.ndarray, q_current: np.ndarray) -> np.ndarray:
    """World-frame rotation vector carrying q_current onto q_target."""
    return _quat_to_rotvec(_quat_multiply(q_target, _quat_conjugate(q_current)))


def solve_step(
    model: KinematicModel,
    state: JointState,
    targets: IkTargets,
    weights: IkTaskWeights,
) -> JointState:
    """One damped-least-squares update; always returns a new state.

    Solves (J^T W J + damping*I) d = J^T W r over the 6 base coordinates plus
    all joints, clamps ||d||_inf to max_step, then clamps joints strictly
    inside their limits.
    """
    targets.validate(model)
    trans, quat, joint_frames = _fk_raw(model, state)

    rows: list[np.ndarray] = []
    resid: list[float] = []
    by_index = {j.q_index: j for j in model.joints}
    base_t = state.base_pose.translation
    dof = model.dof

    def point_jac(link: str, point_world: np.ndarray) -> np.ndarray:
        J = np.zeros((6, dof))
        J[0, 0] = J[1, 1] = J[2, 2] = 1.0
        r = point_world - base_t
        # d(p)/d(base rotvec_i) = e_i x r; angular block is the identity
        J[1, 3], J[2, 3] = -r[2], r[1]
        J[0, 4], J[2, 4] = r[2], -r[0]
        J[0, 5], J[1, 5] = -r[1], r[0]
        J[3, 3] = J[4, 4] = J[5, 5] = 1.0
        for q_index in model._chains[link]:
            joint = by_index[q_index]
            origin, axis = joint_frames[joint.name]
            col = 6 + q_index
            if joint.joint_type == "revolute":
                J[0:3, col] = np.cross(axis, point_world - origin)
                J[3:6, col] = axis
            else:
                J[0:3, col] = axis
        return J

    for name, target in targets.targets.items():
        link, offset = model.keyframes[name]
        cur_t = _quat_rotate(quat[link], offset.translation) + trans[link]
        cur_q = _quat_multiply(quat[link], offset.rotation)
        J = point_jac(link, cur_t)
        w_pos = weights.position_weight(name)
        w_rot = weights.rotation_weight(name)
        if w_pos > 0:
            rows.append(w_pos * J[0:3])
            resid.extend(w_pos * (target.translation - cur_t))
        if w_rot > 0:
            rows.append(w_rot * J[3:6])
            resid.extend(w_rot * _rotvec_between(target.rotation, cur_q))

    rest = targets.rest_posture
    if weights.posture > 0 and rest is not None:
        block = np.zeros((model.joint_count, dof))
        block[:, 6:] = weights.posture * np.eye(model.joint_count)
        rows.append(block)
        resid.extend(weights.posture * (rest.q - state.q))

    if weights.collision > 0 and model.collision_pairs:
        centers = {}

        def center(i: int) -> np.ndarray:
            if i not in centers:
                sphere = model.collision_spheres[i]
                centers[i] = _quat_rotate(quat[sphere.link], sphere.center) + trans[sphere.link]
            return centers[i]

        for a, b in model.collision_pairs:
            delta = center(a) - center(b)
            dist = float(np.linalg.norm(delta))
            radii = model.collision_spheres[a].radius + model.collision_spheres[b].radius
            clearance = dist - radii
            if clearance >= weights.collision_margin:
                continue
            axis = delta / dist if dist > 1e-9 else np.array([0.0, 0.0, 1.0])
            Ja = point_jac(model.collision_spheres[a].link, center(a))[0:3]
            Jb = point_jac(model.collision_spheres[b].link, center(b))[0:3]
            rows.append((weights.collision * (axis @ (Ja - Jb)))[None, :])
            resid.append(weights.collision * (weights.collision_margin - clearance))

    if not rows:
        return state.copy()

    J_stack = np.vstack(rows)
    r_stack = np.asarray(resid)
    if weights.lock_base:
        J_stack = J_stack.copy()
        J_stack[:, 0:6] = 0.0
    A = J_stack.T @ J_stack + weights.damping * np.eye(dof)
    delta = np.linalg.solve(A, J_stack.T @ r_stack)
    peak = float(np.max(np.abs(delta)))
    if peak > weights.max_step:
        delta = delta * (weights.max_step / peak)

    new_state = apply_dof_delta(model, state, delta)
    lo, hi = model.limits_arrays()
    new_state.q = np.clip(new_state.q, lo + _LIMIT_EPS, hi - _LIMIT_EPS)
    return new_state


def _residuals(model, state, targets) -> dict[str, tuple[float, float]]:
    trans, quat, _ = _fk_raw(model, state)
    out = {}
    for name, target in targets.targets.items():
        link, offset = model.keyframes[name]
        cur_t = _quat_rotate(quat[link], offset.translation) + trans[link]
        cur_q = _quat_multiply(quat[link], offset.rotation)
        q_rel = _quat_multiply(target.rotation, _quat_conjugate(cur_q))
        angle = 2.0 * np.arctan2(float(np.linalg.norm(q_rel[1:])), abs(float(q_rel[0])))
        out[name] = (float(np.linalg.norm(target.translation - cur_t)), angle)
    return out


def _saturated_joints(model, state) -> list[str]:
    lo, hi = model.limits_arrays()
    out = []
    for joint in model.joints:
        q = float(state.q[joint.q_index])
        if q <= lo[joint.q_index] + 2 * _LIMIT_EPS or q >= hi[joint.q_index] - 2 * _LIMIT_EPS:
            out.append(joint.name)
    return out


def solve(
    model: KinematicModel,
    q0: JointState,
    targets: IkTargets,
    weights: IkTaskWeights,
    tol: tuple[float, float] = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> IkSolution:
    """Iterate solve_step until the residual tolerances are met or max_iters.

    Infeasibility (targets out of reach, collisions, saturated limits) is
    reported through the solution flags rather than raised.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if targets.rest_posture is None:
        targets = replace(targets, rest_posture=model.zero_state())
    state = q0.copy()
    converged = False
    iterations = 0
    residuals = _residuals(model, state, targets)
    for _ in range(max_iters):
        state = solve_step(model, state, targets, weights)
        iterations += 1
        residuals = _residuals(model, state, targets)
        if all(p <= tol[0] and r <= tol[1] for p, r in residuals.values()):
            converged = True
            break
    collision_flags = [pair for pair, clearance in collision_distances(model, state) if clearance < 0]
    return IkSolution(
        state=state,
        residuals=residuals,
        collision_flags=collision_flags,
        limit_flags=_saturated_joints(model, state),
        converged=converged,
        iterations=iterations,
    )


def solve_trajectory(
    model: KinematicModel,
    target_trajectories: Mapping[str, PoseTrajectory],
    weights: IkTaskWeights,
    rate: float,
    q0: JointState | None = None,
    tol: tuple[float, float] = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> tuple[JointTrajectory, FeasibilityReport]:
    """Batch-retarget keypoint trajectories onto the robot.

    Targets are resampled to a uniform clock at `rate` over the common span;
    each frame warm-starts from the previous solution.
    """
    if not target_trajectories:
        raise ValueError("no target trajectories given")
    if rate <= 0:
        raise ValueError("rate must be positive")
    start = max(traj.start_time for traj in target_trajectories.values())
    end = min(traj.end_time for traj in target_trajectories.values())
    if end <= start:
        raise ValueError(
            f"target trajectories have no common time span (overlap [{start}, {end}])"
        )
    n = int(np.floor((end - start) * rate + 1e-9)) + 1
    times = start + np.arange(n) / rate

    state = (q0 or model.zero_state()).copy()
    rest = model.zero_state()
    report = FeasibilityReport(frames=n)
    base_t = np.empty((n, 3))
    base_r = np.empty((n, 4))
    q_out = np.empty((n, model.joint_count))
    for i, t in enumerate(times):
        targets = IkTargets(
            {name: traj.pose_at(float(t)) for name, traj in target_trajectories.items()},
            rest_posture=rest,
        )
        solution = solve(model, state, targets, weights, tol=tol, max_iters=max_iters)
        state = solution.state
        if not solution.converged:
            report.not_converged.append(i)
        if solution.collision_flags:
            report.collisions.append(i)
        if solution.limit_flags:
            report.limit_saturated.append(i)
        base_t[i] = state.base_pose.translation
        base_r[i] = state.base_pose.rotation
        q_out[i] = state.q
    traj = JointTrajectory(times, base_t, base_r, q_out, model.joint_names())
    return traj, report
