"""Synthetic demonstration recordings for tests, demos, and benchmarks.

The generator scripts a smooth whole-body motion on the bundled toy
humanoid, replays it through forward kinematics to produce the five tracker
streams (guaranteeing the keypoints are simultaneously reachable), then
derives per-gripper video channels — gyro magnitudes shifted by a known
clock offset plus sensor noise at a chosen SNR, a width series, and
start/stop markers. Everything is deterministic in the seed.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import formats
from .geom import Pose, PoseTrajectory
from .robot import JointState, forward_kinematics, toy_humanoid

DEFAULT_OFFSETS = {"left_gripper": 0.8, "right_gripper": -0.45}
# both cameras bracket the same physical windows (tracker clock: ~(1,4) and
# ~(5,8)); each camera's markers sit on its own shifted clock, with jitter
# standing in for imprecise start/stop timing
DEFAULT_MARKERS = {
    "left_gripper": [(1.85, 4.75), (5.9, 8.7)],
    "right_gripper": [(0.5, 3.6), (4.6, 7.5)],
}


def band_limited_series(rng: np.random.Generator, n: int, rate: float, cutoff_hz: float = 2.0) -> np.ndarray:
    """Smooth zero-mean noise: white noise convolved with a gaussian kernel."""
    raw = rng.normal(size=n + 200)
    sigma = rate / (2 * np.pi * cutoff_hz)
    half = int(4 * sigma)
    x = np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    smooth = np.convolve(raw, kernel, mode="same")[100 : 100 + n]
    return smooth - smooth.mean()


def scripted_motion(duration: float, rate: float, seed: int):
    """Joint-space script for the toy humanoid: yawing pelvis, swinging arms."""
    model = toy_humanoid()
    rng = np.random.default_rng(seed)
    n = int(duration * rate) + 1
    times = np.arange(n) / rate
    yaw = 0.35 * band_limited_series(rng, n, rate, cutoff_hz=1.5)
    bob = 0.9 + 0.03 * np.sin(2 * np.pi * 0.4 * times)
    arm = 0.45 * np.sin(2 * np.pi * 0.45 * times)
    waist = 0.25 * band_limited_series(rng, n, rate, cutoff_hz=1.0)
    names = model.joint_names()
    i_waist = names.index("waist_yaw")
    i_lsp = names.index("left_shoulder_pitch")
    i_rsp = names.index("right_shoulder_pitch")
    i_lel = names.index("left_elbow")
    i_rel = names.index("right_elbow")

    states = []
    for k in range(n):
        q = np.zeros(model.joint_count)
        q[i_waist] = waist[k]
        q[i_lsp] = arm[k]
        q[i_rsp] = -arm[k]
        q[i_lel] = 0.6 + 0.2 * np.sin(2 * np.pi * 0.3 * times[k])
        q[i_rel] = 0.6 - 0.2 * np.sin(2 * np.pi * 0.3 * times[k])
        half = 0.5 * yaw[k]
        base = Pose(
            np.array([0.05 * np.sin(2 * np.pi * 0.2 * times[k]), 0.0, bob[k]]),
            np.array([np.cos(half), 0.0, 0.0, np.sin(half)]),
        )
        states.append(JointState(base, q))
    return model, times, states


def tracker_streams_from_script(duration: float = 10.0, rate: float = 50.0, seed: int = 0):
    model, times, states = scripted_motion(duration, rate, seed)
    samples: dict[str, list] = {name: [] for name in model.keyframes}
    for t, state in zip(times, states):
        fk = forward_kinematics(model, state)
        for name, pose in fk.items():
            samples[name].append((float(t), pose))
    return {
        name: PoseTrajectory.from_samples(name, entries, rate_hint=rate)
        for name, entries in samples.items()
    }


def _add_noise(rng: np.random.Generator, values: np.ndarray, snr_db: float) -> np.ndarray:
    power = float(np.var(values))
    if power == 0:
        return values
    noise_power = power / (10 ** (snr_db / 10.0))
    return values + rng.normal(0.0, np.sqrt(noise_power), size=len(values))


def generate_recording(
    out_dir,
    seed: int = 0,
    duration: float = 10.0,
    rate: float = 50.0,
    video_rate: float = 200.0,
    offsets: dict[str, float] | None = None,
    markers: dict[str, list[tuple[float, float]]] | None = None,
    snr_db: float = 20.0,
) -> dict:
    """Write a humi-demo/1 recording directory; returns the ground truth.

    Each video stream's gyro content is the pelvis tracker's angular-speed
    profile read at (video time - offset), so cross-correlation should
    recover exactly the injected offsets (returned for verification).
    """
    out = Path(out_dir)
    offsets = dict(DEFAULT_OFFSETS if offsets is None else offsets)
    markers = {k: list(v) for k, v in (DEFAULT_MARKERS if markers is None else markers).items()}
    rng = np.random.default_rng(seed)

    trackers = tracker_streams_from_script(duration, rate, seed)
    from .geom import speed_series

    gyro_times, gyro_mags = speed_series(trackers["pelvis"], kind="angular")

    manifest = {
        "format": formats.DEMO_FORMAT,
        "scene_id": f"synthetic-{seed}",
        "operator_id": "fixture",
        "gyro_tracker": "pelvis",
        "trackers": {},
        "videos": {},
    }
    for name in sorted(trackers):
        rel = f"trackers/{name}.jsonl"
        formats.write_pose_stream(out / rel, trackers[name])
        manifest["trackers"][name] = rel

    for name in sorted(offsets):
        delta = offsets[name]
        # valid video window: content must map inside tracker coverage
        v_start = max(0.0, delta) + 0.05
        v_end = min(duration + delta, duration) - 0.05 if delta < 0 else duration + delta - 0.05
        v_end = min(v_end, v_start + duration)
        v_times = np.arange(v_start, v_end, 1.0 / video_rate)
        content = np.interp(v_times - delta, gyro_times, gyro_mags)
        noisy = _add_noise(rng, content, snr_db)
        width = 0.05 + 0.03 * np.sin(2 * np.pi * 0.5 * v_times + (0.0 if "left" in name else 1.1))
        gyro_rel = f"videos/{name}_gyro.jsonl"
        width_rel = f"videos/{name}_width.jsonl"
        formats.write_series(out / gyro_rel, v_times, noisy, key="value")
        formats.write_series(out / width_rel, v_times, width, key="width")
        manifest["videos"][name] = {
            "video": f"videos/{name}.mp4",
            "gyro": gyro_rel,
            "width": width_rel,
            "markers": [[float(s), float(e)] for s, e in markers.get(name, [])],
        }

    formats.atomic_write_json(out / "manifest.json", manifest)
    return {"offsets": offsets, "duration": duration, "seed": seed}
