"""Toolkit configuration: defaults, YAML overrides, validation.

One YAML file configures every batch command and the preview service;
unspecified fields keep the published defaults. Flag values override file
values, which override defaults. The high-level policy hyperparameters are
carried as a validated, passive schema: nothing in this toolkit consumes
them, they exist so packaged datasets ship reproducible training configs.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .ik import DEFAULT_MAX_ITERS, DEFAULT_TOL, PREVIEW_TICK_ITERS, IkTaskWeights
from .ingest import DEFAULT_SEARCH_WINDOW, DEFAULT_SYNC_RATE, PackageConfig
from .rewards import TrackingRewardConfig
from .tracksim import TrackerModel


class ConfigError(ValueError):
    """Config file violates the schema."""


@dataclass(frozen=True)
class SyncSettings:
    rate: float = DEFAULT_SYNC_RATE
    search_window: float = DEFAULT_SEARCH_WINDOW


@dataclass(frozen=True)
class IkSettings:
    position: float = 1.0
    rotation: float = 0.5
    posture: float = 0.002
    collision: float = 1.0
    damping: float = 1e-4
    max_step: float = 0.5
    collision_margin: float = 0.02
    tolerance_position: float = DEFAULT_TOL[0]
    tolerance_rotation: float = DEFAULT_TOL[1]
    max_iters: int = DEFAULT_MAX_ITERS
    preview_iters: int = PREVIEW_TICK_ITERS

    def weights(self) -> IkTaskWeights:
        return IkTaskWeights(
            position=self.position,
            rotation=self.rotation,
            posture=self.posture,
            collision=self.collision,
            damping=self.damping,
            max_step=self.max_step,
            collision_margin=self.collision_margin,
        )

    def tolerance(self) -> tuple[float, float]:
        return (self.tolerance_position, self.tolerance_rotation)


@dataclass(frozen=True)
class RetargetSettings:
    rate: float = 50.0
    human_height: float = 1.75
    robot_height: float = 1.30


@dataclass(frozen=True)
class TrackerSettings:
    gain: float = 5.0
    latency: float = 0.0
    noise_position: float = 0.0
    noise_rotation: float = 0.0
    drift_rate: float = 0.0
    blind_keypoints: tuple[str, ...] = ("pelvis", "left_foot", "right_foot")

    def model(self) -> TrackerModel:
        return TrackerModel(
            gain=self.gain,
            latency=self.latency,
            noise_std=(self.noise_position, self.noise_rotation),
            drift_rate=self.drift_rate,
            blind_keypoints=tuple(self.blind_keypoints),
        )


@dataclass(frozen=True)
class PreviewSettings:
    tick_iters: int = PREVIEW_TICK_ITERS
    update_rate_hz: float = 30.0
    queue_limit: int = 8


@dataclass(frozen=True)
class HighLevelPolicySettings:
    """Passive mirror of the published policy hyperparameters (unconsumed)."""

    visual_observation_horizon: int = 1
    visual_observation_frequency_hz: float = 20.0
    proprioceptive_observation_horizon: int = 3
    proprioceptive_observation_frequency_hz: float = 20.0
    action_horizon: int = 48
    action_frequency_hz: float = 20.0
    execution_to_data_speed_ratio: float = 1.0
    image_resolution: tuple[int, int, int] = (2, 224, 224)  # cameras x H x W
    vision_backbone: str = "vit_base_patch14_dinov2.lvd142m"
    policy_learning_rate: float = 3e-4
    vision_backbone_learning_rate: float = 3e-5
    epochs: int = 200
    batch_size: int = 256
    training_loss: str = "flow_matching"
    inference_denoising_steps: int = 10

    def __post_init__(self):
        for name in (
            "visual_observation_horizon",
            "proprioceptive_observation_horizon",
            "action_horizon",
            "epochs",
            "batch_size",
            "inference_denoising_steps",
        ):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"highlevel.{name} must be a positive integer")
        if len(self.image_resolution) != 3 or any(v <= 0 for v in self.image_resolution):
            raise ConfigError("highlevel.image_resolution must be three positive integers")
        for name in (
            "visual_observation_frequency_hz",
            "proprioceptive_observation_frequency_hz",
            "action_frequency_hz",
            "policy_learning_rate",
            "vision_backbone_learning_rate",
            "execution_to_data_speed_ratio",
        ):
            if float(getattr(self, name)) <= 0:
                raise ConfigError(f"highlevel.{name} must be positive")


@dataclass(frozen=True)
class Config:
    rewards: TrackingRewardConfig = field(default_factory=TrackingRewardConfig)
    ik: IkSettings = field(default_factory=IkSettings)
    retarget: RetargetSettings = field(default_factory=RetargetSettings)
    sync: SyncSettings = field(default_factory=SyncSettings)
    tracker: TrackerSettings = field(default_factory=TrackerSettings)
    preview: PreviewSettings = field(default_factory=PreviewSettings)
    highlevel: HighLevelPolicySettings = field(default_factory=HighLevelPolicySettings)

    def package_config(self) -> PackageConfig:
        return PackageConfig(
            weights=self.ik.weights(),
            rate=self.retarget.rate,
            human_height=self.retarget.human_height,
            robot_height=self.retarget.robot_height,
            tolerance=self.ik.tolerance(),
            max_iters=self.ik.max_iters,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rewards"]["sigma_ee_rotation_degrees"] = [
            math.degrees(v) for v in out["rewards"].pop("sigma_ee_rotation")
        ]
        return out


def _coerce(section: str, cls, overrides: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"{section}: unknown field(s) {sorted(unknown)}")
    coerced = {}
    for name, value in overrides.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[name] = value
    return coerced


def _build_rewards(overrides: dict) -> TrackingRewardConfig:
    overrides = dict(overrides)
    # rotation tolerances are written in degrees on disk, radians in memory
    if "sigma_ee_rotation_degrees" in overrides:
        lo, hi = overrides.pop("sigma_ee_rotation_degrees")
        overrides["sigma_ee_rotation"] = (math.radians(lo), math.radians(hi))
    kwargs = _coerce("rewards", TrackingRewardConfig, overrides)
    try:
        return replace(TrackingRewardConfig(), **kwargs)
    except ValueError as exc:
        raise ConfigError(f"rewards: {exc}") from exc


_SECTIONS = {
    "ik": IkSettings,
    "retarget": RetargetSettings,
    "sync": SyncSettings,
    "tracker": TrackerSettings,
    "preview": PreviewSettings,
    "highlevel": HighLevelPolicySettings,
}


def load_config(path=None) -> Config:
    """Defaults, overridden by the YAML file at `path` when given."""
    if path is None:
        return Config()
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(doc) - (set(_SECTIONS) | {"rewards"})
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    kwargs = {}
    if "rewards" in doc:
        kwargs["rewards"] = _build_rewards(doc["rewards"] or {})
    for section, cls in _SECTIONS.items():
        if section in doc:
            overrides = _coerce(section, cls, doc[section] or {})
            try:
                kwargs[section] = cls(**{**asdict(cls()), **overrides})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from exc
    return Config(**kwargs)
