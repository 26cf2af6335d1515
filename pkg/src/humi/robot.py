"""Humanoid kinematic model: link/joint tree, FK, Jacobians, limits, collision spheres.

Models load from a versioned ``humi-model/1`` YAML document (see
docs/formats.md). The joint graph is a tree rooted at a floating base; the
base contributes 6 virtual coordinates prepended to every Jacobian.
"""
from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .geom import Pose, _quat_from_rotvec, _quat_multiply, _quat_rotate

MODEL_FORMAT = "humi-model/1"

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FLOATING_BASE = "floating-base"


class ModelFormatError(ValueError):
    """Model document violates the humi-model/1 schema; message carries a path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Joint:
    name: str
    joint_type: str
    parent: str
    child: str
    axis: np.ndarray | None
    limits: tuple[float, float] | None
    q_index: int  # position in the actuated-joint vector; -1 for the base


@dataclass(frozen=True)
class Link:
    name: str
    parent: str | None  # parent link; None for the root
    offset: Pose  # fixed transform: parent link frame -> this joint's frame
    joint: str | None  # joint whose motion places this link; None for root


@dataclass(frozen=True)
class CollisionSphere:
    link: str
    center: np.ndarray  # offset in the link frame, meters
    radius: float


@dataclass
class KinematicModel:
    """Immutable after load; FK and Jacobians are pure functions over it."""

    name: str
    links: dict[str, Link]
    joints: list[Joint]  # actuated joints, document order
    root: str
    keyframes: dict[str, tuple[str, Pose]]  # name -> (link, fixed offset)
    collision_spheres: list[CollisionSphere]
    collision_pairs: list[tuple[int, int]]
    link_order: list[str] = field(default_factory=list)
    # per link: q-indices of actuated joints on the chain root -> link
    _chains: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.link_order:
            self.link_order = self._topological_order()
        if not self._chains:
            self._chains = self._build_chains()

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    @property
    def dof(self) -> int:
        """Solver-visible coordinates: 6 floating-base + actuated joints."""
        return 6 + len(self.joints)

    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def limits_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return lo, hi

    def zero_state(self, base_pose: Pose | None = None) -> "JointState":
        return JointState(base_pose or Pose.identity(), np.zeros(self.joint_count))

    def _topological_order(self) -> list[str]:
        order, seen = [], set()

        def visit(name: str):
            link = self.links[name]
            if link.parent is not None and link.parent not in seen:
                visit(link.parent)
            seen.add(name)
            order.append(name)

        for name in self.links:
            if name not in seen:
                visit(name)
        return order

    def _build_chains(self) -> dict[str, tuple[int, ...]]:
        by_name = {j.name: j for j in self.joints}
        chains: dict[str, tuple[int, ...]] = {}
        for name in self._topological_order():
            link = self.links[name]
            if link.parent is None:
                chains[name] = ()
                continue
            chain = chains[link.parent]
            if link.joint is not None and link.joint in by_name:
                chain = chain + (by_name[link.joint].q_index,)
            chains[name] = chain
        return chains


@dataclass
class JointState:
    """Floating-base pose plus per-joint positions (and optional velocities)."""

    base_pose: Pose
    q: np.ndarray
    qd: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if self.qd is not None:
            self.qd = np.asarray(self.qd, dtype=np.float64).reshape(-1)

    def copy(self) -> "JointState":
        return JointState(self.base_pose, self.q.copy(), None if self.qd is None else self.qd.copy())


@dataclass
class JointTrajectory:
    """Uniformly sampled whole-body states (output of batch IK)."""

    times: np.ndarray
    base_translations: np.ndarray  # (N, 3)
    base_rotations: np.ndarray  # (N, 4) wxyz
    q: np.ndarray  # (N, joint_count)
    joint_names: list[str]

    def __len__(self) -> int:
        return len(self.times)

    def state_at_index(self, i: int) -> JointState:
        return JointState(Pose(self.base_translations[i], self.base_rotations[i]), self.q[i])


# ---------------------------------------------------------------------------
# document parsing


def _rpy_to_quat(rpy) -> np.ndarray:
    roll, pitch, yaw = (float(v) for v in rpy)
    qx = _quat_from_rotvec(np.array([roll, 0.0, 0.0]))
    qy = _quat_from_rotvec(np.array([0.0, pitch, 0.0]))
    qz = _quat_from_rotvec(np.array([0.0, 0.0, yaw]))
    from .geom import _quat_multiply

    return _quat_multiply(qz, _quat_multiply(qy, qx))


def _check_fields(node: dict, allowed: set[str], required: set[str], path: str):
    if not isinstance(node, dict):
        raise ModelFormatError(path, f"expected a mapping, got {type(node).__name__}")
    unknown = set(node) - allowed
    if unknown:
        raise ModelFormatError(path, f"unknown field(s) {sorted(unknown)}")
    missing = required - set(node)
    if missing:
        raise ModelFormatError(path, f"missing required field(s) {sorted(missing)}")


def _parse_offset(node, path: str) -> Pose:
    if node is None:
        return Pose.identity()
    _check_fields(node, {"translation", "rpy"}, set(), path)
    translation = node.get("translation", [0.0, 0.0, 0.0])
    if len(translation) != 3:
        raise ModelFormatError(path + ".translation", "expected 3 numbers")
    rpy = node.get("rpy", [0.0, 0.0, 0.0])
    if len(rpy) != 3:
        raise ModelFormatError(path + ".rpy", "expected 3 numbers")
    return Pose(np.asarray(translation, dtype=np.float64), _rpy_to_quat(rpy))


def load_model(text: str) -> KinematicModel:
    """Parse and validate a humi-model/1 document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelFormatError("document", f"not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("document", "top level must be a mapping")
    _check_fields(
        doc,
        {"format", "name", "links", "joints", "keyframes", "collision"},
        {"format", "name", "links", "joints", "keyframes"},
        "document",
    )
    if doc["format"] != MODEL_FORMAT:
        raise ModelFormatError("format", f"unsupported version {doc['format']!r}, expected {MODEL_FORMAT!r}")

    raw_links = doc["links"]
    if not isinstance(raw_links, list) or not raw_links:
        raise ModelFormatError("links", "expected a non-empty list")
    link_offsets: dict[str, Pose] = {}
    for i, node in enumerate(raw_links):
        path = f"links[{i}]"
        _check_fields(node, {"name", "offset"}, {"name"}, path)
        name = node["name"]
        if name in link_offsets:
            raise ModelFormatError(path, f"duplicate link name {name!r}")
        link_offsets[name] = _parse_offset(node.get("offset"), path + ".offset")

    raw_joints = doc["joints"]
    if not isinstance(raw_joints, list) or not raw_joints:
        raise ModelFormatError("joints", "expected a non-empty list")
    actuated: list[Joint] = []
    base_joints: list[dict] = []
    joint_names: set[str] = set()
    child_to_joint: dict[str, Joint] = {}
    for i, node in enumerate(raw_joints):
        path = f"joints[{i}]"
        _check_fields(node, {"name", "type", "parent", "child", "axis", "limits"}, {"name", "type", "parent", "child"}, path)
        name = node["name"]
        if name in joint_names:
            raise ModelFormatError(path, f"duplicate joint name {name!r}")
        joint_names.add(name)
        jtype = node["type"]
        if jtype not in (REVOLUTE, PRISMATIC, FLOATING_BASE):
            raise ModelFormatError(path + ".type", f"unknown joint type {jtype!r}")
        child = node["child"]
        if child not in link_offsets:
            raise ModelFormatError(path + ".child", f"unknown link {child!r}")
        if child in child_to_joint or any(b["child"] == child for b in base_joints):
            raise ModelFormatError(path + ".child", f"link {child!r} has more than one parent joint")
        if jtype == FLOATING_BASE:
            if node["parent"] != "world":
                raise ModelFormatError(path + ".parent", "floating-base joint must have parent 'world'")
            if "axis" in node or "limits" in node:
                raise ModelFormatError(path, "floating-base joint takes no axis or limits")
            base_joints.append(node)
            continue
        parent = node["parent"]
        if parent not in link_offsets:
            raise ModelFormatError(path + ".parent", f"unknown link {parent!r}")
        if "axis" not in node or "limits" not in node:
            raise ModelFormatError(path, f"{jtype} joint requires axis and limits")
        axis = np.asarray(node["axis"], dtype=np.float64).reshape(-1)
        if axis.shape != (3,) or np.linalg.norm(axis) < 1e-9:
            raise ModelFormatError(path + ".axis", "expected a non-zero 3-vector")
        axis = axis / np.linalg.norm(axis)
        limits = node["limits"]
        if len(limits) != 2:
            raise ModelFormatError(path + ".limits", "expected [q_min, q_max]")
        lo, hi = float(limits[0]), float(limits[1])
        if not lo < hi:
            raise ModelFormatError(path + ".limits", f"q_min >= q_max for joint {name!r}")
        joint = Joint(name, jtype, parent, child, axis, (lo, hi), q_index=len(actuated))
        actuated.append(joint)
        child_to_joint[child] = joint

    if len(base_joints) != 1:
        raise ModelFormatError("joints", f"expected exactly one floating-base joint, found {len(base_joints)}")
    root = base_joints[0]["child"]

    links: dict[str, Link] = {}
    for name, offset in link_offsets.items():
        if name == root:
            if not offset.almost_equal(Pose.identity()):
                raise ModelFormatError(f"links[{name}].offset", "root link must not carry an offset")
            links[name] = Link(name, None, Pose.identity(), None)
        else:
            joint = child_to_joint.get(name)
            if joint is None:
                raise ModelFormatError(f"links[{name}]", "link unreachable: no joint has it as child")
            links[name] = Link(name, joint.parent, offset, joint.name)

    # reject cycles / paths that never reach the root
    for name in links:
        seen = set()
        cur: str | None = name
        while cur is not None:
            if cur in seen:
                raise ModelFormatError(f"links[{name}]", "cycle in joint graph")
            seen.add(cur)
            cur = links[cur].parent
        if root not in seen:
            raise ModelFormatError(f"links[{name}]", "link does not descend from the floating base")

    raw_keyframes = doc["keyframes"]
    if not isinstance(raw_keyframes, dict) or not raw_keyframes:
        raise ModelFormatError("keyframes", "expected a non-empty mapping")
    keyframes: dict[str, tuple[str, Pose]] = {}
    for name, node in raw_keyframes.items():
        path = f"keyframes.{name}"
        _check_fields(node, {"link", "offset"}, {"link"}, path)
        link = node["link"]
        if link not in links:
            raise ModelFormatError(path + ".link", f"unknown link {link!r}")
        keyframes[name] = (link, _parse_offset(node.get("offset"), path + ".offset"))

    spheres: list[CollisionSphere] = []
    pairs: list[tuple[int, int]] = []
    if "collision" in doc:
        coll = doc["collision"]
        _check_fields(coll, {"spheres", "pairs"}, set(), "collision")
        for i, node in enumerate(coll.get("spheres", [])):
            path = f"collision.spheres[{i}]"
            _check_fields(node, {"link", "center", "radius"}, {"link", "center", "radius"}, path)
            if node["link"] not in links:
                raise ModelFormatError(path + ".link", f"unknown link {node['link']!r}")
            radius = float(node["radius"])
            if radius <= 0:
                raise ModelFormatError(path + ".radius", "radius must be positive")
            center = np.asarray(node["center"], dtype=np.float64).reshape(-1)
            if center.shape != (3,):
                raise ModelFormatError(path + ".center", "expected a 3-vector")
            spheres.append(CollisionSphere(node["link"], center, radius))
        for i, pair in enumerate(coll.get("pairs", [])):
            path = f"collision.pairs[{i}]"
            if len(pair) != 2:
                raise ModelFormatError(path, "expected a pair of sphere indices")
            a, b = int(pair[0]), int(pair[1])
            if not (0 <= a < len(spheres) and 0 <= b < len(spheres)) or a == b:
                raise ModelFormatError(path, f"invalid sphere pair ({a}, {b})")
            pairs.append((a, b))

    return KinematicModel(
        name=doc["name"],
        links=links,
        joints=actuated,
        root=root,
        keyframes=keyframes,
        collision_spheres=spheres,
        collision_pairs=pairs,
    )


def load_model_file(path) -> KinematicModel:
    with open(path, "r", encoding="utf-8") as fh:
        return load_model(fh.read())


def toy_humanoid() -> KinematicModel:
    """The bundled ~23-joint toy humanoid fixture (see data/toy_humanoid.yaml)."""
    text = importlib.resources.files("humi").joinpath("data/toy_humanoid.yaml").read_text()
    return load_model(text)


# ---------------------------------------------------------------------------
# kinematics


def _fk_raw(model: KinematicModel, state: JointState):
    """Raw-array FK: per-link world (translation, quaternion) plus each
    actuated joint's world origin and axis. Hot path: no Pose construction."""
    if len(state.q) != model.joint_count:
        raise ValueError(
            f"state has {len(state.q)} joint positions, model has {model.joint_count} joints"
        )
    by_name = {j.name: j for j in model.joints}
    trans: dict[str, np.ndarray] = {}
    quat: dict[str, np.ndarray] = {}
    joint_frames: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    q = state.q
    for name in model.link_order:
        link = model.links[name]
        if link.parent is None:
            trans[name] = state.base_pose.translation
            quat[name] = state.base_pose.rotation
            continue
        pt, pq = trans[link.parent], quat[link.parent]
        # pre-motion frame: parent * fixed offset
        pre_t = _quat_rotate(pq, link.offset.translation) + pt
        pre_q = _quat_multiply(pq, link.offset.rotation)
        joint = by_name[link.joint]
        axis_world = _quat_rotate(pre_q, joint.axis)
        joint_frames[joint.name] = (pre_t, axis_world)
        qj = float(q[joint.q_index])
        if joint.joint_type == REVOLUTE:
            trans[name] = pre_t
            quat[name] = _quat_multiply(pre_q, _quat_from_rotvec(joint.axis * qj))
        else:
            trans[name] = pre_t + axis_world * qj
            quat[name] = pre_q
    return trans, quat, joint_frames


def _fk_links(model: KinematicModel, state: JointState):
    """World pose of every link plus each actuated joint's world origin/axis."""
    trans, quat, joint_frames = _fk_raw(model, state)
    poses = {name: Pose(trans[name], quat[name]) for name in trans}
    return poses, joint_frames


def link_poses(model: KinematicModel, state: JointState) -> dict[str, Pose]:
    poses, _ = _fk_links(model, state)
    return poses


def forward_kinematics(model: KinematicModel, state: JointState) -> dict[str, Pose]:
    """World pose of every keyframe."""
    trans, quat, _ = _fk_raw(model, state)
    out = {}
    for name, (link, offset) in model.keyframes.items():
        t = _quat_rotate(quat[link], offset.translation) + trans[link]
        r = _quat_multiply(quat[link], offset.rotation)
        out[name] = Pose(t, r)
    return out


def point_jacobian(
    model: KinematicModel, state: JointState, link_name: str, point_world: np.ndarray
) -> np.ndarray:
    """Geometric Jacobian (6 x dof) of a point rigidly attached to a link.

    Rows: linear velocity (m per rad|m), then angular velocity. Columns: 6
    floating-base coordinates (world-frame translation, then rotation about
    the base origin), followed by the actuated joints in model order.
    """
    if link_name not in model.links:
        raise KeyError(f"unknown link {link_name!r}")
    _, _, joint_frames = _fk_raw(model, state)
    by_index = {j.q_index: j for j in model.joints}
    J = np.zeros((6, model.dof))
    # floating base: translation moves the point directly; rotation swings it
    # about the base origin
    J[0:3, 0:3] = np.eye(3)
    r = point_world - state.base_pose.translation
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        J[0:3, 3 + i] = np.cross(e, r)
        J[3:6, 3 + i] = e
    for q_index in model._chains[link_name]:
        joint = by_index[q_index]
        origin, axis = joint_frames[joint.name]
        col = 6 + q_index
        if joint.joint_type == REVOLUTE:
            J[0:3, col] = np.cross(axis, point_world - origin)
            J[3:6, col] = axis
        else:
            J[0:3, col] = axis
    return J


def jacobian(model: KinematicModel, state: JointState, keyframe: str) -> np.ndarray:
    """Geometric Jacobian of a keyframe with respect to base + all joints."""
    if keyframe not in model.keyframes:
        raise KeyError(f"unknown keyframe {keyframe!r}")
    link, offset = model.keyframes[keyframe]
    trans, quat, _ = _fk_raw(model, state)
    point = _quat_rotate(quat[link], offset.translation) + trans[link]
    return point_jacobian(model, state, link, point)


def apply_dof_delta(model: KinematicModel, state: JointState, delta: np.ndarray) -> JointState:
    """Advance the state along a dof-vector [dp(3), dtheta(3), dq(N)].

    The base rotation delta is a world-frame rotation vector applied on the
    left, matching the Jacobian's floating-base columns.
    """
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    if delta.shape != (model.dof,):
        raise ValueError(f"delta must have length {model.dof}, got {delta.shape}")
    base = state.base_pose
    new_rot = _quat_from_rotvec(delta[3:6])
    from .geom import _quat_multiply

    new_base = Pose(base.translation + delta[0:3], _quat_multiply(new_rot, base.rotation))
    return JointState(new_base, state.q + delta[6:])


def joint_limit_violations(model: KinematicModel, state: JointState) -> list[tuple[str, float]]:
    """Joints outside their open limit interval, with signed overshoot.

    The interval is open: a joint sitting exactly on a bound counts as a
    violation (overshoot 0.0).
    """
    out = []
    for joint in model.joints:
        q = float(state.q[joint.q_index])
        lo, hi = joint.limits
        if q >= hi:
            out.append((joint.name, q - hi))
        elif q <= lo:
            out.append((joint.name, q - lo))
    return out


def sphere_centers(model: KinematicModel, state: JointState) -> np.ndarray:
    trans, quat, _ = _fk_raw(model, state)
    centers = np.empty((len(model.collision_spheres), 3))
    for i, sphere in enumerate(model.collision_spheres):
        centers[i] = _quat_rotate(quat[sphere.link], sphere.center) + trans[sphere.link]
    return centers


def collision_distances(
    model: KinematicModel, state: JointState
) -> list[tuple[tuple[int, int], float]]:
    """Signed clearance per configured sphere pair (negative = interpenetration)."""
    if not model.collision_pairs:
        return []
    centers = sphere_centers(model, state)
    out = []
    for a, b in model.collision_pairs:
        dist = float(np.linalg.norm(centers[a] - centers[b]))
        clearance = dist - (model.collision_spheres[a].radius + model.collision_spheres[b].radius)
        out.append(((a, b), clearance))
    return out
