"""Command-line entry point wiring the toolkit into reproducible batch runs.

Commands:
  sync            recover per-video clock offsets for a recording
  package         build the two-subset training dataset from a recording
  simulate        run the kinematic tracking simulator over a dataset
  reward-eval     per-frame tracking-reward trace for an episode
  serve           run the live IK preview service
  demo-recording  generate a synthetic recording for trying the pipeline

Every command takes --config/--seed/--out where meaningful, writes its
outputs atomically, and leaves a run manifest (<output>.run.json) capturing
command, config, seeds, and paths. Exit codes: 0 success, 1 domain failure,
2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, formats
from .chunk import ReferenceMode, scripted_chunk_stream
from .config import Config, ConfigError, load_config
from .fixtures import generate_recording
from .geom import finite_difference_twist
from .ingest import (
    DegenerateSignalError,
    MarkerError,
    align_recording,
    delineate_episodes,
    load_recording,
    package,
    read_dataset,
    read_offsets,
    write_dataset,
    write_offsets,
)
from .robot import ModelFormatError, load_model_file, toy_humanoid
from .rewards import (
    BodySample,
    EndEffectorSample,
    TrackingSample,
    body_reward,
    curriculum_at,
    ee_reward,
    penalties,
    total_tracking_reward,
)
from .tracksim import drift_experiment, run_episode

USAGE_ERROR = 2
DOMAIN_ERROR = 1


def _load_model_arg(path: str | None):
    if path is None or path == "bundled":
        return toy_humanoid()
    return load_model_file(path)


def _write_run_manifest(target: Path, args, config: Config, t_start: float,
                        inputs: list[str], outputs: list[str], seed=None):
    manifest = {
        "format": "humi-run/1",
        "command": args.command,
        "argv": sys.argv[1:],
        "tool_version": __version__,
        "config": config.to_dict(),
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "wall_time_s": round(time.time() - t_start, 3),
    }
    formats.atomic_write_json(target, manifest)


def _write_csv(path: Path, header: list[str], rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    formats.atomic_write_text(path, buf.getvalue())


def cmd_sync(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    recording_dir = Path(args.recording)
    rec = load_recording(recording_dir)
    offsets = align_recording(rec, rate=config.sync.rate, search_window=config.sync.search_window)
    write_offsets(recording_dir, offsets)
    _write_run_manifest(
        recording_dir / "offsets.run.json", args, config, t0,
        inputs=[str(recording_dir)], outputs=[str(recording_dir / "offsets.json")],
    )
    for name in sorted(offsets):
        print(f"{name}: {offsets[name]:+.4f} s")
    return 0


def cmd_package(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    recording_dir = Path(args.recording)
    out = Path(args.out)
    rec = load_recording(recording_dir)
    try:
        offsets = read_offsets(recording_dir)
    except FileNotFoundError:
        offsets = align_recording(rec, rate=config.sync.rate, search_window=config.sync.search_window)
    model = _load_model_arg(args.model)
    episodes = delineate_episodes(rec, offsets, rate=config.retarget.rate)
    dataset = package(episodes, config.package_config(), model, seed=args.seed)
    write_dataset(dataset, out)
    flagged = [e.episode.index for e in dataset.episodes if e.flagged]
    if flagged:
        frac = len(flagged) / max(len(dataset.episodes), 1)
        print(
            f"warning: {len(flagged)}/{len(dataset.episodes)} episodes flagged "
            f"({100 * frac:.0f}%): {flagged}",
            file=sys.stderr,
        )
    _write_run_manifest(
        out.parent / f"{out.name}.run.json", args, config, t0,
        inputs=[str(recording_dir)], outputs=[str(out)], seed=args.seed,
    )
    print(f"packaged {len(dataset.episodes)} episode(s) into {out}")
    return 0


def cmd_simulate(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    out = Path(args.out)
    dataset = read_dataset(args.dataset)
    if not dataset.episodes:
        raise ValueError("dataset has no episodes to simulate")
    mode = ReferenceMode.TARGET_POSE if args.mode == "target" else ReferenceMode.EXECUTED_POSE
    tracker = config.tracker.model()
    drift_rate = args.drift_rate if args.drift_rate is not None else tracker.drift_rate

    from . import report

    all_metrics = {}
    boundary_rows = []
    drift_rows = []
    drift_curves = {}
    tracking_summary = {}
    for packaged in dataset.episodes:
        episode = packaged.episode
        refs = episode.streams
        plans = scripted_chunk_stream(
            refs, waypoint_count=args.waypoints, waypoint_dt=args.waypoint_dt
        )
        if not plans:
            continue
        initial = {name: traj.pose_at_index(0) for name, traj in refs.items()}
        metrics = run_episode(plans, mode, tracker, args.seed, initial)
        all_metrics[episode.index] = metrics.to_dict()
        for b, boundary in enumerate(metrics.boundary_discontinuities):
            for name, (dp, dr) in sorted(boundary.items()):
                boundary_rows.append([episode.index, b, name, f"{dp:.9f}", f"{dr:.9f}"])
        for name in sorted(metrics.mean_position_error):
            entry = tracking_summary.setdefault(name, {"mean": 0.0, "max": 0.0, "n": 0})
            entry["mean"] += metrics.mean_position_error[name]
            entry["max"] = max(entry["max"], metrics.max_position_error[name])
            entry["n"] += 1
        if "pelvis" in refs:
            result = drift_experiment(refs["pelvis"], drift_rate, args.blind_style)
            drift_curves[f"episode {episode.index} ({args.blind_style})"] = (
                result.times, result.target_errors,
            )
            for t, e in zip(result.times[:: args.drift_stride], result.target_errors[:: args.drift_stride]):
                drift_rows.append([episode.index, args.blind_style, f"{t:.4f}", f"{e:.9f}"])

    for entry in tracking_summary.values():
        entry["mean"] /= max(entry.pop("n"), 1)

    out.mkdir(parents=True, exist_ok=True)
    formats.atomic_write_json(
        out / "metrics.json",
        {
            "mode": args.mode,
            "blind_style": args.blind_style,
            "drift_rate": drift_rate,
            "episodes": all_metrics,
        },
    )
    _write_csv(out / "boundaries.csv", ["episode", "boundary", "keypoint", "position_m", "rotation_rad"], boundary_rows)
    _write_csv(out / "drift.csv", ["episode", "style", "time_s", "target_error_m"], drift_rows)
    per_mode = {
        args.mode: [
            max((v[0] for v in boundary.values()), default=0.0)
            for m in all_metrics.values()
            for boundary in m["boundary_discontinuities"]
        ]
    }
    report.boundary_figure(out / "boundaries.png", per_mode)
    report.drift_figure(out / "drift.png", drift_curves)
    report.tracking_error_figure(out / "tracking.png", tracking_summary)
    _write_run_manifest(
        out.parent / f"{out.name}.run.json", args, config, t0,
        inputs=[str(args.dataset)], outputs=[str(out)], seed=args.seed,
    )
    print(f"simulated {len(all_metrics)} episode(s) under {args.mode} anchoring -> {out}")
    return 0


def _twist_speed(traj, t, kind):
    tw = finite_difference_twist(traj, t)
    return float(np.linalg.norm(tw.linear if kind == "linear" else tw.angular))


def cmd_reward_eval(args) -> int:
    t0 = time.time()
    config = load_config(args.config)
    out = Path(args.out)
    dataset = read_dataset(args.dataset)
    by_index = {p.episode.index: p for p in dataset.episodes}
    if args.episode not in by_index:
        raise ValueError(f"episode {args.episode} not in dataset (have {sorted(by_index)})")
    packaged = by_index[args.episode]
    refs = packaged.episode.streams
    ee_names = sorted(n for n in refs if "gripper" in n)

    if args.tracked:
        tracked = {}
        for name in refs:
            path = Path(args.tracked) / f"{name}.jsonl"
            if not path.exists():
                raise ValueError(f"tracked trajectory missing stream {name!r} at {path}")
            tracked[name] = formats.read_pose_stream(path, name)
        lo = max(t.start_time for t in tracked.values())
        hi = min(t.end_time for t in tracked.values())
        if lo > refs["pelvis"].start_time + 1e-9 or hi < refs["pelvis"].end_time - 1e-9:
            raise ValueError(
                f"tracked span [{lo}, {hi}] does not cover the episode span {packaged.episode.span}"
            )
    else:
        tracked = refs  # self-tracking: perfect

    curriculum = curriculum_at(args.step)
    model = _load_model_arg(args.model)
    joints = packaged.joint_trajectory
    times = refs["pelvis"].times
    rows = []
    r_body_series, r_ee_series, r_total_series = [], [], []
    for i, t in enumerate(times):
        t = float(t)
        bodies = {}
        ees = {}
        for name, ref in refs.items():
            ref_pose = ref.pose_at(t)
            act_pose = tracked[name].pose_at(t)
            ref_twist = finite_difference_twist(ref, t)
            act_twist = finite_difference_twist(tracked[name], t)
            bodies[name] = BodySample(
                p_ref=ref_pose.translation, p=act_pose.translation,
                rot_ref=ref_pose, rot=act_pose,
                v_ref=ref_twist.linear, v=act_twist.linear,
                w_ref=ref_twist.angular, w=act_twist.angular,
            )
            if name in ee_names:
                ees[name] = EndEffectorSample(
                    p_ref=ref_pose.translation, p=act_pose.translation,
                    rot_ref=ref_pose, rot=act_pose,
                    v_ref_ee=float(np.linalg.norm(ref_twist.linear)),
                )
        sample = TrackingSample(bodies, ees, _twist_speed(refs["pelvis"], t, "linear"))
        r_body = body_reward(sample, config.rewards)
        r_ee = ee_reward(sample, config.rewards, curriculum) if ees else 0.0
        r_total = total_tracking_reward(sample, config.rewards, curriculum)
        j = min(i, len(joints) - 1)
        a_prev = joints.q[max(j - 1, 0)]
        penalty = penalties(joints.q[j], a_prev, joints.state_at_index(j), model, {}, config.rewards)
        rows.append([f"{t:.4f}", f"{r_body:.9f}", f"{r_ee:.9f}", f"{r_total:.9f}", f"{penalty:.9f}"])
        r_body_series.append(r_body)
        r_ee_series.append(r_ee)
        r_total_series.append(r_total)

    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "rewards.csv", ["time_s", "r_body", "r_ee", "r_total", "penalty"], rows)
    from . import report

    report.reward_trace_figure(out / "rewards.png", times, r_body_series, r_ee_series, r_total_series)
    formats.atomic_write_json(
        out / "summary.json",
        {
            "episode": args.episode,
            "step": args.step,
            "mode": config.rewards.mode,
            "frames": len(rows),
            "mean_r_total": float(np.mean(r_total_series)),
            "w_ee": curriculum.w_ee,
        },
    )
    _write_run_manifest(
        out.parent / f"{out.name}.run.json", args, config, t0,
        inputs=[str(args.dataset)], outputs=[str(out)], seed=None,
    )
    print(f"evaluated {len(rows)} frames of episode {args.episode} -> {out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    config = load_config(args.config)
    model = _load_model_arg(args.model)
    dataset = read_dataset(args.dataset) if args.dataset else None
    app = create_app(model, config, dataset)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_demo_recording(args) -> int:
    truth = generate_recording(Path(args.out), seed=args.seed)
    print(f"wrote synthetic recording to {args.out} (injected offsets: {truth['offsets']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="humi", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"humi {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sync", help="recover per-video clock offsets")
    p.add_argument("recording", help="recording directory (humi-demo/1)")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("package", help="build the two-subset training dataset")
    p.add_argument("recording")
    p.add_argument("--model", default="bundled", help="model document path or 'bundled'")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("simulate", help="kinematic tracking simulation over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=["target", "executed"], default="target")
    p.add_argument("--blind-style", choices=["relative", "absolute"], default="relative")
    p.add_argument("--drift-rate", type=float, default=None, help="m/s estimator drift for blind keypoints")
    p.add_argument("--waypoints", type=int, default=48)
    p.add_argument("--waypoint-dt", type=float, default=0.05)
    p.add_argument("--drift-stride", type=int, default=10)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reward-eval", help="per-frame tracking reward trace")
    p.add_argument("--dataset", required=True)
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--tracked", default=None, help="directory of tracked pose streams (default: self)")
    p.add_argument("--step", type=int, default=0, help="training step for curriculum resolution")
    p.add_argument("--model", default="bundled")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reward_eval)

    p = sub.add_parser("serve", help="run the live IK preview service")
    p.add_argument("--model", default="bundled")
    p.add_argument("--dataset", default=None, help="packaged dataset for episode scrubbing")
    p.add_argument("--config", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8731)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("demo-recording", help="generate a synthetic recording")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo_recording)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, formats.FormatError, ModelFormatError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (DegenerateSignalError, MarkerError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DOMAIN_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
