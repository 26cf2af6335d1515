"""Tracking-reward and penalty stack for the low-level motion controller.

The whole-body reward sums an exponential kernel over four metrics
(position, rotation, linear and angular velocity); end-effector precision
gets its own gated, velocity-adaptive term whose tolerance widens with the
commanded end-effector speed. A training curriculum ramps the end-effector
weight in and tightens its position tolerance over a fixed step window.
``mode="fixed"`` switches to the ungated tight-tolerance variant used as an
ablation baseline.

All functions are pure; velocities and speeds are norms of linear
quantities unless a field says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geom import Pose, rotation_error
from .robot import JointState, KinematicModel, joint_limit_violations

ADAPTIVE = "adaptive"
FIXED = "fixed"


@dataclass(frozen=True)
class TrackingRewardConfig:
    """Tolerances, gate, and weights; defaults are the published constants."""

    # whole-body kernel tolerances per metric
    sigma_position: float = 0.3  # m
    sigma_rotation: float = 0.4  # rad
    sigma_linear_velocity: float = 1.0  # m/s
    sigma_angular_velocity: float = math.pi  # rad/s
    # end-effector adaptive tolerance ranges
    sigma_ee_position: tuple[float, float] = (0.01, 0.1)  # m (min, max)
    sigma_ee_rotation: tuple[float, float] = (math.radians(5.0), math.radians(20.0))
    v_interp: tuple[float, float] = (0.05, 0.1)  # m/s (v_min, v_max)
    gate_delta: float = 0.02  # m/s; base speeds at or above this zero the EE reward
    w_body: float = 1.0
    w_ee_max: float = 0.5
    mode: str = ADAPTIVE
    # regularization penalties
    action_rate_weight: float = -5e-2
    joint_limit_weight: float = -10.0
    contact_weight: float = -0.1
    contact_force_threshold: float = 1.0  # N
    # links whose names contain one of these carry the leg contact geometry
    # (the toy model's shin/foot links stand in for knee/ankle bodies)
    contact_exempt_substrings: tuple[str, ...] = ("ankle", "foot", "knee", "shin", "hip")

    def __post_init__(self):
        for name in ("sigma_position", "sigma_rotation", "sigma_linear_velocity", "sigma_angular_velocity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("sigma_ee_position", "sigma_ee_rotation"):
            lo, hi = getattr(self, name)
            if lo <= 0 or lo > hi:
                raise ValueError(f"{name} must satisfy 0 < min <= max")
        v_min, v_max = self.v_interp
        if not v_min < v_max:
            raise ValueError("v_interp must satisfy v_min < v_max")
        if self.w_body < 0 or self.w_ee_max < 0:
            raise ValueError("weights must be >= 0")
        if self.mode not in (ADAPTIVE, FIXED):
            raise ValueError(f"mode must be '{ADAPTIVE}' or '{FIXED}'")


@dataclass(frozen=True)
class BodySample:
    """Reference vs actual pose and twist of one tracked body."""

    p_ref: np.ndarray
    p: np.ndarray
    rot_ref: Pose
    rot: Pose
    v_ref: np.ndarray
    v: np.ndarray
    w_ref: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class EndEffectorSample:
    p_ref: np.ndarray
    p: np.ndarray
    rot_ref: Pose
    rot: Pose
    v_ref_ee: float  # commanded end-effector speed, m/s


@dataclass(frozen=True)
class TrackingSample:
    bodies: Mapping[str, BodySample]
    end_effectors: Mapping[str, EndEffectorSample]
    v_ref_base: float  # reference base speed, m/s

    @staticmethod
    def perfect(
        body_poses: Mapping[str, Pose],
        ee_poses: Mapping[str, Pose],
        v_ref_base: float = 0.0,
        v_ref_ee: float = 0.0,
    ) -> "TrackingSample":
        """Zero-error sample: actual == reference everywhere."""
        zero = np.zeros(3)
        bodies = {
            name: BodySample(pose.translation, pose.translation, pose, pose, zero, zero, zero, zero)
            for name, pose in body_poses.items()
        }
        ees = {
            name: EndEffectorSample(pose.translation, pose.translation, pose, pose, v_ref_ee)
            for name, pose in ee_poses.items()
        }
        return TrackingSample(bodies, ees, v_ref_base)


@dataclass(frozen=True)
class CurriculumState:
    """Training-step-resolved weights and tolerances (piecewise linear)."""

    step: int
    ramp_window: tuple[int, int]
    w_ee: float
    sigma_p_min: float  # m
    speed_sigma: float  # std of the speed-augmentation truncated normal


DEFAULT_RAMP_WINDOW = (10_000, 15_000)
W_EE_RANGE = (0.0, 0.5)
SIGMA_P_MIN_RANGE = (0.1, 0.01)
SPEED_SIGMA_RANGE = (1e-4, 1.0)


def curriculum_at(step: int, ramp_window: tuple[int, int] = DEFAULT_RAMP_WINDOW) -> CurriculumState:
    """Resolve the training curriculum at a step count.

    Each quantity ramps linearly across the window and is constant outside:
    the end-effector weight rises 0 -> 0.5, its minimum position tolerance
    anneals 0.1 m -> 0.01 m, and the speed-augmentation std rises
    1e-4 -> 1.0.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    lo, hi = ramp_window
    u = min(max((step - lo) / (hi - lo), 0.0), 1.0)
    return CurriculumState(
        step=step,
        ramp_window=ramp_window,
        w_ee=W_EE_RANGE[0] + u * (W_EE_RANGE[1] - W_EE_RANGE[0]),
        sigma_p_min=SIGMA_P_MIN_RANGE[0] + u * (SIGMA_P_MIN_RANGE[1] - SIGMA_P_MIN_RANGE[0]),
        speed_sigma=SPEED_SIGMA_RANGE[0] + u * (SPEED_SIGMA_RANGE[1] - SPEED_SIGMA_RANGE[0]),
    )


def kernel(error_sq: float, sigma: float) -> float:
    """exp(-error_sq / sigma^2); 1.0 at zero error, decaying with error."""
    if error_sq < 0:
        raise ValueError("error_sq must be >= 0")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return math.exp(-error_sq / (sigma * sigma))


def _mean_sq(values: Sequence[float]) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def body_reward(sample: TrackingSample, config: TrackingRewardConfig) -> float:
    """Whole-body tracking reward: one kernel per metric, summed (max 4.0).

    Each metric's error is the mean over tracked bodies of the squared error
    norm; rotation errors are geodesic angles.
    """
    if not sample.bodies:
        raise ValueError("sample has no tracked bodies")
    bodies = list(sample.bodies.values())
    e_p = _mean_sq([float(np.sum((b.p_ref - b.p) ** 2)) for b in bodies])
    e_r = _mean_sq([rotation_error(b.rot_ref, b.rot) ** 2 for b in bodies])
    e_v = _mean_sq([float(np.sum((b.v_ref - b.v) ** 2)) for b in bodies])
    e_w = _mean_sq([float(np.sum((b.w_ref - b.w) ** 2)) for b in bodies])
    return (
        kernel(e_p, config.sigma_position)
        + kernel(e_r, config.sigma_rotation)
        + kernel(e_v, config.sigma_linear_velocity)
        + kernel(e_w, config.sigma_angular_velocity)
    )


def ee_tolerance(
    v_ref_ee: float,
    metric: str,
    config: TrackingRewardConfig,
    sigma_min_override: float | None = None,
) -> float:
    """Speed-adaptive tolerance: linear in v over [v_min, v_max], clipped.

    Slow reference motion demands the tight minimum tolerance; fast motion
    relaxes to the maximum. The curriculum supplies sigma_min_override for
    the position metric while annealing.
    """
    if v_ref_ee < 0:
        raise ValueError("v_ref_ee must be >= 0")
    if metric == "position":
        sigma_min, sigma_max = config.sigma_ee_position
    elif metric == "rotation":
        sigma_min, sigma_max = config.sigma_ee_rotation
    else:
        raise ValueError(f"unknown metric {metric!r}")
    if sigma_min_override is not None:
        sigma_min = sigma_min_override
    v_min, v_max = config.v_interp
    interp = (v_ref_ee - v_min) / (v_max - v_min) * (sigma_max - sigma_min) + sigma_min
    return float(min(max(interp, min(sigma_min, sigma_max)), max(sigma_min, sigma_max)))


def ee_reward(
    sample: TrackingSample,
    config: TrackingRewardConfig,
    curriculum: CurriculumState | None = None,
) -> float:
    """End-effector precision reward (max 2.0: position + rotation terms).

    Adaptive mode gates on the reference base speed (still base only) and
    draws its position tolerance floor from the curriculum. Fixed mode
    (the ablation baseline) applies the tight tolerances everywhere with no
    gate. With several end-effectors the kernel sees the mean squared error
    and the mean commanded speed.
    """
    if not sample.end_effectors:
        raise ValueError("sample has no end-effectors")
    ees = list(sample.end_effectors.values())
    e_p = _mean_sq([float(np.sum((e.p_ref - e.p) ** 2)) for e in ees])
    e_r = _mean_sq([rotation_error(e.rot_ref, e.rot) ** 2 for e in ees])
    if config.mode == FIXED:
        sigma_p = config.sigma_ee_position[0]
        sigma_r = config.sigma_ee_rotation[0]
        return kernel(e_p, sigma_p) + kernel(e_r, sigma_r)
    if sample.v_ref_base >= config.gate_delta:
        return 0.0
    v_ee = float(np.mean([e.v_ref_ee for e in ees]))
    sigma_p_min = curriculum.sigma_p_min if curriculum is not None else None
    sigma_p = ee_tolerance(v_ee, "position", config, sigma_min_override=sigma_p_min)
    sigma_r = ee_tolerance(v_ee, "rotation", config)
    return kernel(e_p, sigma_p) + kernel(e_r, sigma_r)


def total_tracking_reward(
    sample: TrackingSample,
    config: TrackingRewardConfig,
    curriculum: CurriculumState,
) -> float:
    """w_body * r_body + w_ee * r_EE with w_ee resolved by mode/curriculum.

    When the effective end-effector weight is zero the EE term is skipped
    entirely, so the result cannot depend on any end-effector field.
    """
    r = config.w_body * body_reward(sample, config)
    w_ee = config.w_ee_max if config.mode == FIXED else curriculum.w_ee
    if w_ee > 0.0:
        r += w_ee * ee_reward(sample, config, curriculum)
    return r


def penalties(
    a_t: np.ndarray,
    a_prev: np.ndarray,
    state: JointState,
    model: KinematicModel,
    contacts: Mapping[str, float],
    config: TrackingRewardConfig = TrackingRewardConfig(),
) -> float:
    """Regularization penalties: action rate, joint limits, undesired contact.

    ``contacts`` maps link name -> external force magnitude (N), supplied by
    whatever simulator produced the rollout. Links whose names mark them as
    leg contact geometry are exempt from the contact penalty.
    """
    a_t = np.asarray(a_t, dtype=np.float64)
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if a_t.shape != a_prev.shape:
        raise ValueError(f"action shapes differ: {a_t.shape} vs {a_prev.shape}")
    total = config.action_rate_weight * float(np.sum((a_t - a_prev) ** 2))
    total += config.joint_limit_weight * len(joint_limit_violations(model, state))
    undesired = 0
    for link, force in contacts.items():
        if force <= config.contact_force_threshold:
            continue
        if any(tag in link for tag in config.contact_exempt_substrings):
            continue
        undesired += 1
    total += config.contact_weight * undesired
    return total
