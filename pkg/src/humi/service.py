"""Live IK preview service.

A persistent bidirectional message channel (websocket) drives one solver
session per connection: clients stream keypoint targets and receive joint
states with feasibility flags at interactive rates. Messages follow the
versioned humi-preview/1 schema:

    {"type": ..., "session": ..., "payload": {...}, "seq": n}

Client -> server types: open, targets, scrub, record_start, record_stop.
Server -> client types: state, error. Target updates are applied in arrival
order through a bounded per-session queue; when a slow consumer lets the
queue overflow, the oldest unprocessed *target* message is dropped and
counted, so the preview always tracks the freshest input. The solution
content of every state message lives under payload["solution"] and is a
pure function of the applied message sequence, which makes recorded streams
replayable bit-for-bit.

A one-shot POST /solve endpoint exposes the same solver for headless use.
"""
from __future__ import annotations

import asyncio
import collections
import json
from dataclasses import dataclass, field

from fastapi import FastAPI
from starlette.websockets import WebSocket, WebSocketDisconnect

from . import __version__
from .config import Config
from .formats import PREVIEW_FORMAT
from .geom import Pose
from .ik import IkTargets, solve
from .ingest import PackagedDataset
from .robot import KinematicModel, link_poses

_QUEUE_DROPPABLE = "targets"


def _parse_pose(node) -> Pose:
    try:
        return Pose.from_dict(node)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed pose: {exc}") from exc


def _pose_dict(pose: Pose) -> dict:
    return pose.to_dict()


@dataclass
class PreviewSession:
    session_id: str
    model: KinematicModel
    config: Config
    state: object = None  # JointState
    targets: dict = field(default_factory=dict)
    drop_count: int = 0
    recording: list | None = None

    def __post_init__(self):
        self.state = self.model.zero_state()

    def solve_current(self, max_iters: int):
        targets = IkTargets(dict(self.targets), rest_posture=self.model.zero_state())
        solution = solve(
            self.model,
            self.state,
            targets,
            self.config.ik.weights(),
            tol=self.config.ik.tolerance(),
            max_iters=max_iters,
        )
        self.state = solution.state
        return solution

    def solution_payload(self, solution) -> dict:
        poses = link_poses(self.model, self.state)
        from .robot import forward_kinematics

        keyframes = forward_kinematics(self.model, self.state)
        return {
            "converged": solution.converged,
            "iterations": solution.iterations,
            "residuals": {k: [v[0], v[1]] for k, v in sorted(solution.residuals.items())},
            "collision_flags": [list(p) for p in solution.collision_flags],
            "limit_flags": list(solution.limit_flags),
            "base_pose": _pose_dict(self.state.base_pose),
            "q": [float(v) for v in self.state.q],
            "links": {name: _pose_dict(poses[name]) for name in sorted(poses)},
            "keyframes": {name: _pose_dict(keyframes[name]) for name in sorted(keyframes)},
        }


def _model_description(model: KinematicModel) -> dict:
    return {
        "name": model.name,
        "joint_names": model.joint_names(),
        "links": {
            name: {"parent": link.parent} for name, link in sorted(model.links.items())
        },
        "keyframes": {name: link for name, (link, _) in sorted(model.keyframes.items())},
        "spheres": [
            {"link": s.link, "center": [float(v) for v in s.center], "radius": s.radius}
            for s in model.collision_spheres
        ],
    }


def create_app(
    model: KinematicModel,
    config: Config | None = None,
    dataset: PackagedDataset | None = None,
) -> FastAPI:
    config = config or Config()
    app = FastAPI(title="humi preview service", version=__version__)
    session_counter = {"n": 0}

    def episode_targets(index: int, t: float) -> dict[str, Pose]:
        if dataset is None:
            raise ValueError("no dataset loaded; start the service with --dataset")
        by_index = {p.episode.index: p for p in dataset.episodes}
        if index not in by_index:
            raise ValueError(f"unknown episode {index} (have {sorted(by_index)})")
        episode = by_index[index].episode
        lo, hi = episode.span
        if not lo - 1e-9 <= t <= hi + 1e-9:
            raise ValueError(f"time {t} outside episode span [{lo}, {hi}]")
        retarget = dataset.config_snapshot or {}
        ratio_h = float(retarget.get("human_height", 1.0))
        ratio_r = float(retarget.get("robot_height", 1.0))
        targets = {}
        for name, traj in episode.streams.items():
            pose = traj.pose_at(float(t))
            if name == "pelvis":
                tr = pose.translation
                pose = Pose(
                    [tr[0], tr[1], tr[2] * ratio_r / ratio_h], pose.rotation
                )
            targets[name] = pose
        return targets

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__, "format": PREVIEW_FORMAT}

    @app.get("/model")
    def model_info():
        return _model_description(model)

    @app.post("/solve")
    def batch_solve(body: dict):
        try:
            targets = {k: _parse_pose(v) for k, v in body.get("targets", {}).items()}
            session = PreviewSession("batch", model, config)
            session.targets = targets
            iterations = int(body.get("iterations", config.ik.max_iters))
            solution = session.solve_current(iterations)
            return {"solution": session.solution_payload(solution)}
        except (KeyError, ValueError) as exc:
            return {"error": {"code": "bad_request", "message": str(exc)}}

    @app.websocket("/ws")
    async def preview_ws(socket: WebSocket):
        await socket.accept()
        session_counter["n"] += 1
        session = PreviewSession(f"s{session_counter['n']}", model, config)
        seq_out = {"n": 0}
        queue: collections.deque = collections.deque()
        arrived = asyncio.Event()
        closed = asyncio.Event()

        async def send(msg_type: str, payload: dict):
            seq_out["n"] += 1
            await socket.send_text(
                json.dumps(
                    {
                        "type": msg_type,
                        "session": session.session_id,
                        "payload": payload,
                        "seq": seq_out["n"],
                    }
                )
            )

        async def send_error(code: str, message: str):
            await send("error", {"code": code, "message": message})

        async def reader():
            try:
                while True:
                    text = await socket.receive_text()
                    try:
                        msg = json.loads(text)
                    except json.JSONDecodeError:
                        msg = {"type": "_invalid", "error": "not valid JSON"}
                    queue.append(msg)
                    if len(queue) > config.preview.queue_limit:
                        # drop the oldest unprocessed target update; anything
                        # else (open/scrub/record control) must survive
                        for i, pending in enumerate(queue):
                            if pending.get("type") == _QUEUE_DROPPABLE:
                                del queue[i]
                                session.drop_count += 1
                                break
                    arrived.set()
            except WebSocketDisconnect:
                closed.set()
                arrived.set()

        async def state_message(solution, extra: dict | None = None):
            payload = {
                "solution": session.solution_payload(solution),
                "drop_count": session.drop_count,
            }
            if extra:
                payload.update(extra)
            await send("state", payload)

        async def handle(msg: dict):
            msg_type = msg.get("type")
            payload = msg.get("payload") or {}
            if msg_type == "_invalid":
                await send_error("bad_message", msg["error"])
                return
            if msg_type == "open":
                wanted = payload.get("model")
                if wanted not in (None, "", "default", model.name):
                    await send_error("unknown_model", f"model {wanted!r} is not registered")
                    return
                solution = session.solve_current(config.preview.tick_iters)
                await state_message(solution, {"model": _model_description(model)})
            elif msg_type == "targets":
                try:
                    updates = {k: _parse_pose(v) for k, v in payload.get("targets", {}).items()}
                    for name in updates:
                        if name not in model.keyframes:
                            raise ValueError(f"unknown keyframe {name!r}")
                except ValueError as exc:
                    await send_error("bad_targets", str(exc))
                    return
                session.targets.update(updates)
                solution = session.solve_current(config.preview.tick_iters)
                if session.recording is not None:
                    session.recording.append(
                        {
                            "request": {"type": "targets", "targets": payload.get("targets", {})},
                            "solution": session.solution_payload(solution),
                        }
                    )
                await state_message(solution)
            elif msg_type == "scrub":
                try:
                    targets = episode_targets(int(payload["episode"]), float(payload["t"]))
                except (KeyError, TypeError) as exc:
                    await send_error("bad_scrub", f"scrub needs episode and t: {exc}")
                    return
                except ValueError as exc:
                    await send_error("bad_scrub", str(exc))
                    return
                session.targets = dict(targets)
                solution = session.solve_current(config.ik.max_iters)
                await state_message(solution, {"scrub": payload})
            elif msg_type == "record_start":
                session.recording = []
                await send("state", {"recording": "started", "drop_count": session.drop_count})
            elif msg_type == "record_stop":
                captured = session.recording or []
                session.recording = None
                await send("state", {"recording": captured, "drop_count": session.drop_count})
            else:
                await send_error("unknown_type", f"message type {msg_type!r} not in schema")

        reader_task = asyncio.create_task(reader())
        try:
            while not closed.is_set():
                while queue:
                    await handle(queue.popleft())
                arrived.clear()
                if queue:
                    continue
                await arrived.wait()
        finally:
            reader_task.cancel()

    return app
