"""Demonstration ingestion: recordings, gyro time alignment, episodes, packaging.

A recording carries five tracker pose streams on one shared clock plus, per
gripper video, an embedded-gyro magnitude series, a gripper-width series,
and start/stop markers — all on that video's own clock. Cross-correlating
angular-speed magnitudes recovers each video's clock offset; markers mapped
through the offsets delineate episodes; packaging produces the two training
subsets (high-level: observations/widths/keypoints; low-level: keypoints
plus whole-body IK solutions).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as _signal

from . import formats
from .augment import draw_randomization
from .geom import PoseTrajectory, resample, speed_series
from .ik import FeasibilityReport, IkTaskWeights, scale_pelvis_height_trajectory, solve_trajectory
from .robot import JointTrajectory, KinematicModel

DEFAULT_SYNC_RATE = 50.0  # Hz, common grid for cross-correlation
DEFAULT_SEARCH_WINDOW = 30.0  # s, largest |offset| searched
_VARIANCE_FLOOR = 1e-8


class DegenerateSignalError(ValueError):
    """A gyro series is (near-)constant: no unique correlation peak exists."""


class MarkerError(ValueError):
    """Start/stop markers are malformed (stop before start, overlaps)."""


@dataclass
class VideoStream:
    """Per-gripper camera-side channels, all on the video's own clock."""

    gyro_times: np.ndarray
    gyro_magnitudes: np.ndarray
    width_times: np.ndarray
    width_values: np.ndarray
    markers: list[tuple[float, float]]
    video_ref: str = ""  # relative path of the (never decoded) video file


@dataclass
class DemoRecording:
    tracker_streams: dict[str, PoseTrajectory]
    gyro_tracker: str  # tracker frame whose |angular velocity| anchors sync
    video_streams: dict[str, VideoStream]
    scene_id: str = ""
    operator_id: str = ""

    def tracker_gyro(self) -> tuple[np.ndarray, np.ndarray]:
        traj = self.tracker_streams[self.gyro_tracker]
        return speed_series(traj, kind="angular")

    def tracker_span(self) -> tuple[float, float]:
        start = max(t.start_time for t in self.tracker_streams.values())
        end = min(t.end_time for t in self.tracker_streams.values())
        return start, end


@dataclass
class Episode:
    """One delineated demonstration on the tracker clock, resampled uniformly."""

    index: int
    span: tuple[float, float]
    streams: dict[str, PoseTrajectory]
    widths: dict[str, tuple[np.ndarray, np.ndarray]]
    video_refs: dict[str, str]
    clipped: bool = False


@dataclass
class PackagedEpisode:
    episode: Episode
    joint_trajectory: JointTrajectory
    feasibility: FeasibilityReport
    flagged: bool


@dataclass
class PackagedDataset:
    """The two training subsets plus the reproducibility manifest payload."""

    episodes: list[PackagedEpisode]
    joint_names: list[str]
    config_snapshot: dict = field(default_factory=dict)
    seed: int = 0
    randomization: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# stream alignment


def _to_uniform(times: np.ndarray, values: np.ndarray, rate: float):
    if len(times) < 2:
        raise DegenerateSignalError("series too short to resample")
    n = int(np.floor((times[-1] - times[0]) * rate)) + 1
    grid = times[0] + np.arange(n) / rate
    return grid, np.interp(grid, times, values)


def align_streams(
    a: tuple[np.ndarray, np.ndarray],
    b: tuple[np.ndarray, np.ndarray],
    rate: float = DEFAULT_SYNC_RATE,
    search_window: float = DEFAULT_SEARCH_WINDOW,
) -> float:
    """Clock offset of series b relative to series a.

    Both (timestamps, magnitude) series are resampled to a common uniform
    rate, mean-removed and variance-normalized, and cross-correlated; the
    peak is refined by parabolic interpolation. The returned offset is how
    much later b's clock reads than a's for the same physical event:
    subtract it from b's timestamps to express them on a's clock.
    """
    ta, va = _to_uniform(np.asarray(a[0], float), np.asarray(a[1], float), rate)
    tb, vb = _to_uniform(np.asarray(b[0], float), np.asarray(b[1], float), rate)
    for name, v in (("a", va), ("b", vb)):
        if float(np.var(v)) < _VARIANCE_FLOOR:
            raise DegenerateSignalError(
                f"series {name} is (near-)constant (variance {float(np.var(v)):.2e}); "
                "no unique correlation peak"
            )
    za = (va - va.mean()) / va.std()
    zb = (vb - vb.mean()) / vb.std()
    corr = _signal.correlate(za, zb, mode="full")
    lags = _signal.correlation_lags(len(za), len(zb), mode="full")
    # unbiased per-lag normalization, constrained to the search window and
    # to lags with meaningful overlap
    overlap = np.minimum(
        np.minimum(len(za), len(zb)), np.minimum(len(za) - lags, len(zb) + lags)
    )
    min_overlap = max(int(rate), 10)
    offset_grid = (tb[0] - ta[0]) - lags / rate
    valid = (np.abs(offset_grid) <= search_window) & (overlap >= min_overlap)
    if not np.any(valid):
        raise ValueError(
            f"no candidate offsets within +/-{search_window} s with sufficient overlap"
        )
    score = np.where(valid, corr / np.maximum(overlap, 1), -np.inf)
    k = int(np.argmax(score))
    # parabolic sub-sample refinement around the peak
    frac = 0.0
    if 0 < k < len(score) - 1 and valid[k - 1] and valid[k + 1]:
        c_m, c_0, c_p = score[k - 1], score[k], score[k + 1]
        denom = c_m - 2 * c_0 + c_p
        if abs(denom) > 1e-12:
            frac = float(np.clip(0.5 * (c_m - c_p) / denom, -0.5, 0.5))
    lag = lags[k] + frac
    return float((tb[0] - ta[0]) - lag / rate)


def align_recording(rec: DemoRecording, rate: float = DEFAULT_SYNC_RATE,
                    search_window: float = DEFAULT_SEARCH_WINDOW) -> dict[str, float]:
    """Offset of every video stream relative to the tracker clock."""
    reference = rec.tracker_gyro()
    offsets = {}
    for name in sorted(rec.video_streams):
        stream = rec.video_streams[name]
        try:
            offsets[name] = align_streams(
                reference, (stream.gyro_times, stream.gyro_magnitudes), rate, search_window
            )
        except DegenerateSignalError as exc:
            raise DegenerateSignalError(f"video stream {name!r}: {exc}") from exc
    return offsets


# ---------------------------------------------------------------------------
# episode delineation


def _validate_markers(name: str, markers: list[tuple[float, float]]):
    for start, stop in markers:
        if stop <= start:
            raise MarkerError(f"video {name!r}: stop {stop} not after start {start}")
    ordered = sorted(markers)
    for (s0, e0), (s1, e1) in zip(ordered, ordered[1:]):
        if s1 < e0:
            raise MarkerError(f"video {name!r}: marker pairs overlap ({s0},{e0}) and ({s1},{e1})")


def delineate_episodes(
    rec: DemoRecording,
    offsets: dict[str, float],
    rate: float = DEFAULT_SYNC_RATE,
) -> list[Episode]:
    """One episode per group of overlapping start/stop pairs.

    Marker times live on each video's clock; the recovered offsets map them
    onto the tracker clock. Pairs from different videos that overlap there
    are one episode (span: their intersection); strict start/stop alignment
    across cameras is not required. Episodes extending past tracker coverage
    are clipped and flagged.
    """
    entries = []  # (start, stop, stream name) on the tracker clock
    for name in sorted(rec.video_streams):
        stream = rec.video_streams[name]
        _validate_markers(name, stream.markers)
        if name not in offsets:
            raise KeyError(f"no offset for video stream {name!r}; run alignment first")
        delta = offsets[name]
        for start, stop in stream.markers:
            entries.append((start - delta, stop - delta, name))
    entries.sort()
    if not entries:
        return []

    groups: list[list[tuple[float, float, str]]] = []
    for entry in entries:
        if groups and entry[0] < max(e[1] for e in groups[-1]):
            groups[-1].append(entry)
        else:
            groups.append([entry])

    cov_start, cov_end = rec.tracker_span()
    episodes = []
    for index, group in enumerate(groups):
        start = max(e[0] for e in group)
        stop = min(e[1] for e in group)
        if stop <= start:
            raise MarkerError(
                f"episode {index}: overlapping markers from different videos share no common span"
            )
        clipped = start < cov_start or stop > cov_end
        start, stop = max(start, cov_start), min(stop, cov_end)
        if stop <= start:
            raise MarkerError(f"episode {index}: span lies outside tracker coverage")
        n = int(np.floor((stop - start) * rate + 1e-9)) + 1
        times = start + np.arange(n) / rate
        streams = {
            name: resample(traj, times) for name, traj in sorted(rec.tracker_streams.items())
        }
        widths = {}
        video_refs = {}
        for _, _, name in sorted(group, key=lambda e: e[2]):
            stream = rec.video_streams[name]
            delta = offsets[name]
            if len(stream.width_times):
                widths[name] = (times.copy(), np.interp(times, stream.width_times - delta, stream.width_values))
            video_refs[name] = stream.video_ref
        episodes.append(
            Episode(
                index=index,
                span=(float(start), float(stop)),
                streams=streams,
                widths=widths,
                video_refs=video_refs,
                clipped=clipped,
            )
        )
    return episodes


# ---------------------------------------------------------------------------
# packaging


@dataclass
class PackageConfig:
    """Retargeting settings applied while building the low-level subset."""

    weights: IkTaskWeights = field(default_factory=IkTaskWeights)
    rate: float = 50.0
    human_height: float = 1.75
    robot_height: float = 1.30
    tolerance: tuple[float, float] = (1e-3, 1e-2)
    max_iters: int = 200

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "human_height": self.human_height,
            "robot_height": self.robot_height,
            "tolerance": list(self.tolerance),
            "max_iters": self.max_iters,
            "weights": {
                "position": self.weights.position,
                "rotation": self.weights.rotation,
                "posture": self.weights.posture,
                "collision": self.weights.collision,
                "damping": self.weights.damping,
                "max_step": self.weights.max_step,
                "collision_margin": self.weights.collision_margin,
            },
        }


def package(
    episodes: list[Episode],
    config: PackageConfig,
    model: KinematicModel,
    seed: int = 0,
) -> PackagedDataset:
    """Build both training subsets from synchronized episodes.

    The low-level subset pairs each episode's keypoint trajectories with a
    whole-body IK solution (pelvis height scaled by robot/human ratio,
    everything else tracked unscaled). Episodes whose feasibility report
    contains failures are kept but flagged.
    """
    packaged = []
    for episode in episodes:
        targets = {}
        for name, traj in episode.streams.items():
            if name == "pelvis":
                targets[name] = scale_pelvis_height_trajectory(
                    traj, config.human_height, config.robot_height
                )
            else:
                targets[name] = traj
        try:
            joint_traj, report = solve_trajectory(
                model,
                targets,
                config.weights,
                rate=config.rate,
                tol=config.tolerance,
                max_iters=config.max_iters,
            )
        except ValueError as exc:
            raise ValueError(f"episode {episode.index}: {exc}") from exc
        packaged.append(
            PackagedEpisode(
                episode=episode,
                joint_trajectory=joint_traj,
                feasibility=report,
                flagged=not report.clean or episode.clipped,
            )
        )
    return PackagedDataset(
        episodes=packaged,
        joint_names=model.joint_names(),
        config_snapshot=config.to_dict(),
        seed=seed,
        randomization=draw_randomization(seed).to_dict(),
    )


# ---------------------------------------------------------------------------
# disk I/O


def load_recording(root) -> DemoRecording:
    """Read a humi-demo/1 recording directory."""
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    doc = formats.read_json(manifest_path)
    formats.check_format(doc, formats.DEMO_FORMAT, manifest_path)
    allowed = {"format", "scene_id", "operator_id", "gyro_tracker", "trackers", "videos"}
    unknown = set(doc) - allowed
    if unknown:
        raise formats.FormatError(f"{manifest_path}: unknown field(s) {sorted(unknown)}")
    trackers = {}
    for name, rel in doc["trackers"].items():
        trackers[name] = formats.read_pose_stream(root / rel, name, rate_hint=DEFAULT_SYNC_RATE)
    gyro_tracker = doc["gyro_tracker"]
    if gyro_tracker not in trackers:
        raise formats.FormatError(
            f"{manifest_path}: gyro_tracker {gyro_tracker!r} is not a tracker stream"
        )
    videos = {}
    for name, node in doc.get("videos", {}).items():
        gyro_times, gyro_mags = formats.read_series(root / node["gyro"], key="value")
        if node.get("width"):
            width_times, width_values = formats.read_series(root / node["width"], key="width")
        else:
            width_times = width_values = np.empty(0)
        videos[name] = VideoStream(
            gyro_times=gyro_times,
            gyro_magnitudes=gyro_mags,
            width_times=width_times,
            width_values=width_values,
            markers=[(float(s), float(e)) for s, e in node.get("markers", [])],
            video_ref=node.get("video", ""),
        )
    return DemoRecording(
        tracker_streams=trackers,
        gyro_tracker=gyro_tracker,
        video_streams=videos,
        scene_id=doc.get("scene_id", ""),
        operator_id=doc.get("operator_id", ""),
    )


def write_offsets(root, offsets: dict[str, float]):
    formats.atomic_write_json(
        Path(root) / "offsets.json",
        {"format": formats.SYNC_FORMAT, "offsets": {k: offsets[k] for k in sorted(offsets)}},
    )


def read_offsets(root) -> dict[str, float]:
    doc = formats.read_json(Path(root) / "offsets.json")
    formats.check_format(doc, formats.SYNC_FORMAT, Path(root) / "offsets.json")
    return {k: float(v) for k, v in doc["offsets"].items()}


def write_dataset(dataset: PackagedDataset, out_dir):
    """Write the two-subset dataset layout (deterministic bytes)."""
    out = Path(out_dir)
    manifest = {
        "format": formats.DATASET_FORMAT,
        "episodes": len(dataset.episodes),
        "joint_names": dataset.joint_names,
        "config": dataset.config_snapshot,
        "seed": dataset.seed,
        "randomization": dataset.randomization,
    }
    for packaged in dataset.episodes:
        episode = packaged.episode
        tag = f"episode_{episode.index:03d}"
        high = out / "high_level" / tag
        low = out / "low_level" / tag
        meta = {
            "index": episode.index,
            "span": [episode.span[0], episode.span[1]],
            "clipped": episode.clipped,
            "video_refs": {k: episode.video_refs[k] for k in sorted(episode.video_refs)},
        }
        formats.atomic_write_json(high / "meta.json", meta)
        for name in sorted(episode.streams):
            formats.write_pose_stream(high / "keypoints" / f"{name}.jsonl", episode.streams[name])
        for name in sorted(episode.widths):
            times, values = episode.widths[name]
            formats.write_series(high / "widths" / f"{name}.jsonl", times, values, key="width")
        low_meta = dict(meta)
        low_meta["flagged"] = packaged.flagged
        low_meta["feasibility"] = packaged.feasibility.to_dict()
        formats.atomic_write_json(low / "meta.json", low_meta)
        for name in sorted(episode.streams):
            formats.write_pose_stream(low / "keypoints" / f"{name}.jsonl", episode.streams[name])
        formats.write_joint_stream(low / "joints.jsonl", packaged.joint_trajectory)
    formats.atomic_write_json(out / "manifest.json", manifest)


def read_dataset(root) -> PackagedDataset:
    root = Path(root)
    doc = formats.read_json(root / "manifest.json")
    formats.check_format(doc, formats.DATASET_FORMAT, root / "manifest.json")
    joint_names = list(doc["joint_names"])
    episodes = []
    for i in range(int(doc["episodes"])):
        tag = f"episode_{i:03d}"
        high = root / "high_level" / tag
        low = root / "low_level" / tag
        meta = formats.read_json(high / "meta.json")
        low_meta = formats.read_json(low / "meta.json")
        streams = {}
        for path in sorted((high / "keypoints").glob("*.jsonl")):
            streams[path.stem] = formats.read_pose_stream(path, path.stem, rate_hint=DEFAULT_SYNC_RATE)
        widths = {}
        widths_dir = high / "widths"
        if widths_dir.exists():
            for path in sorted(widths_dir.glob("*.jsonl")):
                widths[path.stem] = formats.read_series(path, key="width")
        episode = Episode(
            index=int(meta["index"]),
            span=(float(meta["span"][0]), float(meta["span"][1])),
            streams=streams,
            widths=widths,
            video_refs=dict(meta.get("video_refs", {})),
            clipped=bool(meta.get("clipped", False)),
        )
        report = FeasibilityReport(
            frames=int(low_meta["feasibility"]["frames"]),
            not_converged=list(low_meta["feasibility"]["not_converged"]),
            collisions=list(low_meta["feasibility"]["collisions"]),
            limit_saturated=list(low_meta["feasibility"]["limit_saturated"]),
        )
        episodes.append(
            PackagedEpisode(
                episode=episode,
                joint_trajectory=formats.read_joint_stream(low / "joints.jsonl", joint_names),
                feasibility=report,
                flagged=bool(low_meta["flagged"]),
            )
        )
    return PackagedDataset(
        episodes=episodes,
        joint_names=joint_names,
        config_snapshot=dict(doc.get("config", {})),
        seed=int(doc.get("seed", 0)),
        randomization=dict(doc.get("randomization", {})),
    )
