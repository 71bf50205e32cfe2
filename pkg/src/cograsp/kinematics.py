"""Hand description loading, forward kinematics and fingertip Jacobians.

Joint values are indexed over *movable* joints (revolute and prismatic) in
file order. ``fixed`` joints only carry a constant offset, which is how a
fingertip frame is placed at the end of the last phalanx.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

AXIS_TOL = 1e-9
JOINT_TYPES = ("revolute", "prismatic", "fixed")


class HandModelError(ValueError):
    """Structural problem in a hand description."""


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def cross(a, b) -> np.ndarray:
    """Broadcasting cross product over the last axis; much cheaper than np.cross on small arrays."""
    a, b = np.asarray(a), np.asarray(b)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    """Rodrigues formula; exact identity at r = 0."""
    r = np.asarray(r, dtype=float)
    theta = float(np.sqrt(r @ r))
    if theta < 1e-12:
        return np.eye(3) + skew(r)
    k = skew(r / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def matrix_to_rotvec(R: np.ndarray) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.from_matrix(R).as_rotvec()


def left_jacobian(r: np.ndarray) -> np.ndarray:
    """Left Jacobian of SO(3): d(exp(r) y) = -[exp(r) y]_x J_l(r) dr."""
    theta2 = float(r @ r)
    K = skew(r)
    if theta2 < 1e-10:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    theta = np.sqrt(theta2)
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta2 * K
        + (theta - np.sin(theta)) / (theta2 * theta) * (K @ K)
    )


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @classmethod
    def from_params(cls, params: Sequence[float]) -> "RigidTransform":
        """Build from ``[tx, ty, tz, ax, ay, az]`` (translation + axis-angle)."""
        params = np.asarray(params, dtype=float)
        return cls(rotvec_to_matrix(params[3:6]), params[:3].copy())

    def to_params(self) -> np.ndarray:
        return np.concatenate([self.translation, matrix_to_rotvec(self.rotation)])


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    type: str
    origin_xyz: np.ndarray
    origin_rot: np.ndarray
    axis: np.ndarray
    limits: tuple[float, float]


@dataclass(frozen=True)
class Finger:
    name: str
    joint_names: tuple[str, ...]
    tip_link: str


@dataclass(frozen=True)
class FingertipSamples:
    points: np.ndarray  # (N, 3) in tip-link frame
    normals: np.ndarray  # (N, 3) unit, pointing away from the pad
    surface: np.ndarray  # (M, 3) fingertip body samples used for penetration / repulsion


@dataclass(frozen=True, eq=False)
class HandModel:
    joints: tuple[Joint, ...]
    fingers: tuple[Finger, ...]
    fingertip_samples: Mapping[str, FingertipSamples]
    root: str
    name: str = "hand"

    # derived lookup tables, filled in __post_init__
    dof: int = field(init=False)
    movable: tuple[int, ...] = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)
    finger_dofs: Mapping[str, tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        movable = tuple(i for i, j in enumerate(self.joints) if j.type != "fixed")
        dof_of_joint = {self.joints[i].name: k for k, i in enumerate(movable)}
        object.__setattr__(self, "movable", movable)
        object.__setattr__(self, "dof", len(movable))
        object.__setattr__(self, "lower", np.array([self.joints[i].limits[0] for i in movable]))
        object.__setattr__(self, "upper", np.array([self.joints[i].limits[1] for i in movable]))
        object.__setattr__(
            self,
            "finger_dofs",
            {f.name: tuple(dof_of_joint[n] for n in f.joint_names) for f in self.fingers},
        )

    @property
    def finger_names(self) -> list[str]:
        return [f.name for f in self.fingers]

    def finger(self, name: str) -> Finger:
        for f in self.fingers:
            if f.name == name:
                return f
        raise KeyError(f"unknown finger {name!r}")

    def samples(self, finger: str) -> FingertipSamples:
        tip = self.finger(finger).tip_link
        if tip not in self.fingertip_samples:
            raise HandModelError(f"finger {finger!r} has no fingertip samples")
        return self.fingertip_samples[tip]

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=float), self.lower, self.upper)

    def zero_config(self) -> np.ndarray:
        return self.clamp(np.zeros(self.dof))

    @property
    def thumb(self) -> str:
        return self.fingers[0].name

    @property
    def index(self) -> str:
        return self.fingers[1].name


# --------------------------------------------------------------------------
# loading


def _vec(obj, key, n, where):
    try:
        v = np.asarray(obj[key], dtype=float)
    except KeyError:
        raise HandModelError(f"{where}: missing key {key!r}") from None
    except (TypeError, ValueError):
        raise HandModelError(f"{where}: {key!r} is not numeric") from None
    if v.shape != (n,):
        raise HandModelError(f"{where}: {key!r} must have {n} entries, got shape {v.shape}")
    return v


def _parse_joint(raw: dict, k: int) -> Joint:
    where = f"joint[{k}]"
    for key in ("name", "parent", "child", "type"):
        if key not in raw:
            raise HandModelError(f"{where}: missing key {key!r}")
    where = f"joint {raw['name']!r}"
    jtype = raw["type"]
    if jtype not in JOINT_TYPES:
        raise HandModelError(f"{where}: unknown joint type {jtype!r}")
    origin = raw.get("origin", {})
    xyz = _vec(origin, "xyz", 3, where) if "xyz" in origin else np.zeros(3)
    rot = np.eye(3)
    if "rotation" in origin:
        rot = _vec(origin, "rotation", 9, where).reshape(3, 3)
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise HandModelError(f"{where}: origin rotation is not a proper rotation")
    if jtype == "fixed":
        axis = np.array([0.0, 0.0, 1.0])
        limits = (0.0, 0.0)
    else:
        axis = _vec(raw, "axis", 3, where)
        if abs(np.linalg.norm(axis) - 1.0) > AXIS_TOL:
            raise HandModelError(f"{where}: non-unit axis {axis.tolist()}")
        lim = _vec(raw, "limits", 2, where)
        if lim[0] > lim[1]:
            raise HandModelError(f"{where}: limits lo > hi")
        limits = (float(lim[0]), float(lim[1]))
    return Joint(raw["name"], raw["parent"], raw["child"], jtype, xyz, rot, axis, limits)


def _topological(joints: list[Joint]) -> tuple[list[Joint], str]:
    children = {}
    for j in joints:
        if j.child in children:
            raise HandModelError(f"link {j.child!r} has more than one parent joint")
        children[j.child] = j
    parents = {j.parent for j in joints}
    roots = parents - set(children)
    if len(roots) != 1:
        if not roots:
            raise HandModelError("cyclic tree: no root link")
        raise HandModelError(f"joint tree has multiple roots: {sorted(roots)}")
    root = roots.pop()
    # every link must reach the root without revisiting a link
    for link in children:
        seen = {link}
        cur = link
        while cur in children:
            cur = children[cur].parent
            if cur in seen:
                raise HandModelError(f"cyclic tree through link {cur!r}")
            seen.add(cur)
    depth = {}

    def get_depth(link):
        if link == root:
            return 0
        if link not in depth:
            depth[link] = get_depth(children[link].parent) + 1
        return depth[link]

    # stable: sort by depth, then original order
    order = sorted(range(len(joints)), key=lambda k: (get_depth(joints[k].child), k))
    return [joints[k] for k in order], root


def parse_hand(data: dict, name: str = "hand") -> HandModel:
    for key in ("joints", "fingers", "fingertip_samples"):
        if key not in data:
            raise HandModelError(f"missing top-level key {key!r}")
    raw_joints = [_parse_joint(j, k) for k, j in enumerate(data["joints"])]
    names = [j.name for j in raw_joints]
    if len(set(names)) != len(names):
        raise HandModelError("duplicate joint names")
    joints, root = _topological(raw_joints)
    # keep movable-joint numbering in file order
    file_pos = {j.name: k for k, j in enumerate(raw_joints)}
    by_child = {j.child: j for j in joints}
    links = {root} | set(by_child)

    fingers = []
    for k, f in enumerate(data["fingers"]):
        try:
            fname, jnames, tip = f["name"], tuple(f["joint_names"]), f["tip_link"]
        except KeyError as e:
            raise HandModelError(f"finger[{k}]: missing key {e.args[0]!r}") from None
        if tip not in links:
            raise HandModelError(f"finger {fname!r}: unknown fingertip link {tip!r}")
        path = []
        cur = tip
        while cur != root:
            j = by_child[cur]
            if j.type != "fixed":
                path.append(j.name)
            cur = j.parent
        path.reverse()
        if tuple(path) != jnames:
            raise HandModelError(f"finger {fname!r}: finger joints not a chain (expected {path})")
        fingers.append(Finger(fname, jnames, tip))
    if len(fingers) < 1:
        raise HandModelError("hand needs at least one finger")

    samples = {}
    surfaces = data.get("surface_samples", {})
    for tip, entries in data["fingertip_samples"].items():
        if tip not in links:
            raise HandModelError(f"fingertip_samples: unknown fingertip link {tip!r}")
        pts = np.array([_vec(e, "point", 3, f"sample of {tip!r}") for e in entries]).reshape(-1, 3)
        nrm = np.array([_vec(e, "normal", 3, f"sample of {tip!r}") for e in entries]).reshape(-1, 3)
        if len(pts) and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > AXIS_TOL:
            raise HandModelError(f"fingertip_samples {tip!r}: non-unit normal")
        surf = np.asarray(surfaces.get(tip, pts), dtype=float).reshape(-1, 3)
        samples[tip] = FingertipSamples(pts, nrm, surf)

    ordered = tuple(sorted(joints, key=lambda j: file_pos[j.name]))
    model = HandModel(ordered, tuple(fingers), samples, root, name)
    # forward kinematics walks this precomputed topological order
    object.__setattr__(model, "_topo", tuple(file_pos[j.name] for j in joints))
    return model


def load_hand(path) -> HandModel:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        line = text.splitlines()[e.lineno - 1] if e.lineno - 1 < len(text.splitlines()) else ""
        raise HandModelError(f"{path}:{e.lineno}:{e.colno}: {e.msg}: {line.strip()!r}") from None
    return parse_hand(data, name=path.stem)


# --------------------------------------------------------------------------
# kinematics


@dataclass
class KinematicState:
    """World-frame quantities for one configuration."""

    links: dict[str, RigidTransform]
    joint_origin: np.ndarray  # (dof, 3)
    joint_axis: np.ndarray  # (dof, 3)
    wrist: RigidTransform


def _check_q(model: HandModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (model.dof,):
        raise ValueError(f"dimension mismatch: expected {model.dof} joint values, got {q.shape}")
    return q


def kinematic_state(model: HandModel, q, wrist: RigidTransform | None = None) -> KinematicState:
    q = _check_q(model, q)
    wrist = wrist or RigidTransform()
    links = {model.root: wrist}
    origins = np.zeros((model.dof, 3))
    axes = np.zeros((model.dof, 3))
    dof_index = {ji: k for k, ji in enumerate(model.movable)}
    for ji in model._topo:
        j = model.joints[ji]
        parent = links[j.parent]
        R0 = parent.rotation @ j.origin_rot
        t0 = parent.rotation @ j.origin_xyz + parent.translation
        if j.type == "fixed":
            links[j.child] = RigidTransform(R0, t0)
            continue
        k = dof_index[ji]
        a = R0 @ j.axis
        origins[k] = t0
        axes[k] = a
        if j.type == "revolute":
            links[j.child] = RigidTransform(R0 @ rotvec_to_matrix(j.axis * q[k]), t0)
        else:
            links[j.child] = RigidTransform(R0, t0 + a * q[k])
    return KinematicState(links, origins, axes, wrist)


def forward_kinematics(model: HandModel, q, wrist: RigidTransform | None = None) -> dict[str, RigidTransform]:
    """World transform of every link at configuration ``q``."""
    return kinematic_state(model, q, wrist).links


def point_jacobian(model: HandModel, state: KinematicState, finger: str, x: np.ndarray) -> np.ndarray:
    """Positional Jacobian of world points rigidly attached to ``finger``'s tip.

    ``x`` is (3,) or (N, 3); returns (3, n_f) or (N, 3, n_f) over the finger's joints.
    """
    dofs = model.finger_dofs[finger]
    x = np.asarray(x, dtype=float)
    o = state.joint_origin[list(dofs)]
    a = state.joint_axis[list(dofs)]
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    cols = cross(a[None, :, :], xs[:, None, :] - o[None, :, :])  # (N, n_f, 3)
    for c, k in enumerate(dofs):
        if model.joints[model.movable[k]].type == "prismatic":
            cols[:, c, :] = a[c]
    J = np.transpose(cols, (0, 2, 1))
    return J[0] if single else J


def fingertip_jacobian(model: HandModel, q, finger: str, wrist: RigidTransform | None = None) -> np.ndarray:
    """3 x n_f Jacobian of the fingertip frame origin w.r.t. the finger's joints."""
    if finger not in model.finger_dofs:
        raise KeyError(f"unknown finger {finger!r}")
    state = kinematic_state(model, q, wrist)
    tip = state.links[model.finger(finger).tip_link].translation
    return point_jacobian(model, state, finger, tip)


def jacobian_q_derivative(model: HandModel, state: KinematicState, finger: str, x: np.ndarray) -> np.ndarray:
    """dJ/dq for a point fixed on the fingertip: array (3, n_f, n_f), [:, j, k] = d col_j / d q_k."""
    dofs = model.finger_dofs[finger]
    J = point_jacobian(model, state, finger, x)
    a = state.joint_axis[list(dofs)]
    n = len(dofs)
    revolute = [model.joints[model.movable[k]].type == "revolute" for k in dofs]
    out = np.zeros((3, n, n))
    for j in range(n):
        for k in range(n):
            # ancestor (or self) rotation spins column j; descendant motion moves the point
            if k <= j and revolute[k]:
                out[:, j, k] = cross(a[k], J[:, j])
            elif k > j and revolute[j]:
                out[:, j, k] = cross(a[j], J[:, k])
    return out


def fingertip_world(model: HandModel, state: KinematicState, finger: str):
    """World positions/normals of the stored fingertip contact samples and body surface."""
    s = model.samples(finger)
    T = state.links[model.finger(finger).tip_link]
    return T.apply(s.points), s.normals @ T.rotation.T, T.apply(s.surface)


def random_config(model: HandModel, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(model.lower, model.upper)
