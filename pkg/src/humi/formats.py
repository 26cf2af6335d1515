"""On-disk formats: line-delimited record streams, manifests, atomic writes.

Every format is versioned; readers reject unknown versions. Files are
written canonically (sorted keys, minimal separators, repr floats) so that
identical inputs produce byte-identical outputs, and all writes go through
a temp-file + rename so readers never observe partial files.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .geom import Pose, PoseTrajectory
from .robot import JointTrajectory

DEMO_FORMAT = "humi-demo/1"
DATASET_FORMAT = "humi-dataset/1"
SYNC_FORMAT = "humi-sync/1"
PREVIEW_FORMAT = "humi-preview/1"


class FormatError(ValueError):
    """A file violates its documented schema or carries an unknown version."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write_text(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: Path, obj):
    atomic_write_text(path, canonical_json(obj) + "\n")


def write_jsonl(path: Path, records: Iterable[dict]):
    atomic_write_text(Path(path), "".join(canonical_json(r) + "\n" for r in records))


def read_jsonl(path: Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{i + 1}: not valid JSON: {exc}") from exc
    return out


def read_json(path: Path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc


def check_format(doc: dict, expected: str, path) -> None:
    version = doc.get("format")
    if version != expected:
        raise FormatError(f"{path}: format {version!r} not supported (expected {expected!r})")


# ---------------------------------------------------------------------------
# stream payloads


def write_pose_stream(path: Path, traj: PoseTrajectory):
    records = (
        {"t": float(traj.times[i]), "pose": traj.pose_at_index(i).to_dict()}
        for i in range(len(traj))
    )
    write_jsonl(path, records)


def read_pose_stream(path: Path, frame_name: str, rate_hint: float = 0.0) -> PoseTrajectory:
    records = read_jsonl(path)
    if not records:
        raise FormatError(f"{path}: empty pose stream")
    times = np.array([r["t"] for r in records], dtype=np.float64)
    trans = np.array([r["pose"]["t"] for r in records], dtype=np.float64)
    rots = np.array([r["pose"]["q"] for r in records], dtype=np.float64)
    return PoseTrajectory(frame_name, times, trans, rots, rate_hint)


def write_series(path: Path, times: np.ndarray, values: np.ndarray, key: str = "value"):
    records = ({"t": float(t), key: float(v)} for t, v in zip(times, values))
    write_jsonl(path, records)


def read_series(path: Path, key: str = "value") -> tuple[np.ndarray, np.ndarray]:
    records = read_jsonl(path)
    if not records:
        raise FormatError(f"{path}: empty series")
    times = np.array([r["t"] for r in records], dtype=np.float64)
    values = np.array([r[key] for r in records], dtype=np.float64)
    return times, values


def write_joint_stream(path: Path, traj: JointTrajectory):
    records = (
        {
            "t": float(traj.times[i]),
            "base": {"t": [float(v) for v in traj.base_translations[i]],
                     "q": [float(v) for v in traj.base_rotations[i]]},
            "q": [float(v) for v in traj.q[i]],
        }
        for i in range(len(traj))
    )
    write_jsonl(path, records)


def read_joint_stream(path: Path, joint_names: list[str]) -> JointTrajectory:
    records = read_jsonl(path)
    if not records:
        raise FormatError(f"{path}: empty joint stream")
    times = np.array([r["t"] for r in records], dtype=np.float64)
    base_t = np.array([r["base"]["t"] for r in records], dtype=np.float64)
    base_r = np.array([r["base"]["q"] for r in records], dtype=np.float64)
    q = np.array([r["q"] for r in records], dtype=np.float64)
    return JointTrajectory(times, base_t, base_r, q, list(joint_names))
