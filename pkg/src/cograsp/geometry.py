"""Primitive objects with analytic signed distance, planes and convex hulls."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .kinematics import RigidTransform

KINDS = ("sphere", "box", "cylinder", "cloud")
MIN_CLOUD = 32
DEFAULT_CLOUD = 256


class GeometryError(ValueError):
    pass


class DegenerateHullError(GeometryError):
    pass


@dataclass(frozen=True)
class Plane:
    p: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(3)
        n = np.asarray(self.n, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise GeometryError("plane normal must be nonzero")
        if abs(norm - 1.0) > 1e-9:
            n = n / norm
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", n)

    def flipped(self) -> "Plane":
        return Plane(self.p, -self.n)

    def params(self) -> np.ndarray:
        return np.concatenate([self.p, self.n])

    def to_json(self) -> dict:
        return {"p": self.p.tolist(), "n": self.n.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Plane":
        return cls(np.array(d["p"], float), np.array(d["n"], float))


def plane_sdf(P: Plane, x) -> np.ndarray | float:
    """Signed distance n^T (x - p); works on (3,) or (N, 3)."""
    val = (np.asarray(x, dtype=float) - P.p) @ P.n
    return float(val) if np.ndim(val) == 0 else val


def project_to_plane(P: Plane, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = (x - P.p) @ P.n
    return x - np.multiply.outer(d, P.n)


@dataclass(frozen=True, eq=False)
class ObjectShape:
    kind: str
    params: dict
    pose: RigidTransform
    cloud: np.ndarray
    id: str
    cloud_normals: np.ndarray | None = None
    _tree: object = field(default=None, repr=False)

    @property
    def center(self) -> np.ndarray:
        if self.kind == "cloud":
            return self.cloud.mean(axis=0)
        return self.pose.translation

    @property
    def signed(self) -> bool:
        return self.kind != "cloud" or self.cloud_normals is not None

    @property
    def bounding_radius(self) -> float:
        p = self.params
        if self.kind == "sphere":
            return p["r"]
        if self.kind == "box":
            return float(np.linalg.norm([p["hx"], p["hy"], p["hz"]]))
        if self.kind == "cylinder":
            return float(np.hypot(p["r"], p["hh"]))
        return float(np.linalg.norm(self.cloud - self.center, axis=1).max())

    @property
    def min_width(self) -> float:
        """Smallest caliper width, i.e. the narrowest pinch the object allows."""
        p = self.params
        if self.kind == "sphere":
            return 2 * p["r"]
        if self.kind == "box":
            return 2 * min(p["hx"], p["hy"], p["hz"])
        if self.kind == "cylinder":
            return 2 * min(p["r"], p["hh"])
        c = self.cloud - self.center
        _, s, vt = np.linalg.svd(c, full_matrices=False)
        proj = c @ vt[-1]
        return float(proj.max() - proj.min())

    def sdf(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched SDF: x (N, 3) -> values (N,), unit gradients (N, 3)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "cloud":
            return _cloud_sdf(self, x)
        R, t = self.pose.rotation, self.pose.translation
        local = (x - t) @ R
        if self.kind == "sphere":
            val, g = _sphere_sdf(local, self.params["r"])
        elif self.kind == "box":
            val, g = _box_sdf(local, np.array([self.params["hx"], self.params["hy"], self.params["hz"]]))
        else:
            val, g = _cylinder_sdf(local, self.params["r"], self.params["hh"])
        return val, g @ R.T


def _sphere_sdf(x, r):
    d = np.linalg.norm(x, axis=1)
    g = np.zeros_like(x)
    ok = d > 0
    g[ok] = x[ok] / d[ok, None]
    g[~ok] = (0.0, 0.0, 1.0)
    return d - r, g


def _box_sdf(x, h):
    q = np.abs(x) - h
    outside = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(outside, axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    val = out_norm + inside
    sgn = np.where(x >= 0, 1.0, -1.0)
    g = np.zeros_like(x)
    is_out = out_norm > 0
    g[is_out] = sgn[is_out] * outside[is_out] / out_norm[is_out, None]
    ins = ~is_out
    if ins.any():
        k = np.argmax(q[ins], axis=1)
        gi = np.zeros((ins.sum(), 3))
        gi[np.arange(len(k)), k] = sgn[ins][np.arange(len(k)), k]
        g[ins] = gi
    return val, g


def _cylinder_sdf(x, r, hh):
    rho = np.hypot(x[:, 0], x[:, 1])
    q = np.stack([rho - r, np.abs(x[:, 2]) - hh], axis=1)
    outside = np.maximum(q, 0.0)
    out_norm = np.linalg.norm(outside, axis=1)
    val = out_norm + np.minimum(q.max(axis=1), 0.0)
    radial = np.zeros_like(x)
    ok = rho > 0
    radial[ok, 0] = x[ok, 0] / rho[ok]
    radial[ok, 1] = x[ok, 1] / rho[ok]
    radial[~ok, 0] = 1.0
    axial = np.zeros_like(x)
    axial[:, 2] = np.where(x[:, 2] >= 0, 1.0, -1.0)
    g2 = np.zeros_like(q)
    is_out = out_norm > 0
    g2[is_out] = outside[is_out] / out_norm[is_out, None]
    ins = ~is_out
    k = np.argmax(q[ins], axis=1)
    gi = np.zeros((ins.sum(), 2))
    gi[np.arange(len(k)), k] = 1.0
    g2[ins] = gi
    g = g2[:, :1] * radial + g2[:, 1:] * axial
    return val, g


def _cloud_sdf(shape: ObjectShape, x):
    tree = shape._tree
    if tree is None:
        tree = cKDTree(shape.cloud)
        object.__setattr__(shape, "_tree", tree)
    dist, idx = tree.query(x)
    diff = x - shape.cloud[idx]
    g = np.zeros_like(x)
    ok = dist > 0
    g[ok] = diff[ok] / dist[ok, None]
    if shape.cloud_normals is None:
        g[~ok] = (0.0, 0.0, 1.0)
        return dist, g
    nrm = shape.cloud_normals[idx]
    sign = np.where(np.einsum("ij,ij->i", diff, nrm) < 0, -1.0, 1.0)
    g[ok] *= sign[ok, None]
    g[~ok] = nrm[~ok]
    return sign * dist, g


def sdf_query(shape: ObjectShape, x) -> tuple[float, np.ndarray]:
    """Signed distance and unit gradient at a single point."""
    val, g = shape.sdf(np.asarray(x, dtype=float).reshape(1, 3))
    return float(val[0]), g[0]


# --------------------------------------------------------------------------
# primitive construction


def _sample_surface(kind, params, count, rng):
    if kind == "sphere":
        v = rng.standard_normal((count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return params["r"] * v
    if kind == "box":
        h = np.array([params["hx"], params["hy"], params["hz"]])
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        face = rng.choice(6, size=count, p=areas / areas.sum())
        pts = rng.uniform(-1.0, 1.0, (count, 3)) * h
        axis = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        pts[np.arange(count), axis] = sign * h[axis]
        return pts
    r, hh = params["r"], params["hh"]
    side, cap = 2 * np.pi * r * 2 * hh, np.pi * r * r
    part = rng.choice(3, size=count, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0.0, 2 * np.pi, count)
    rad = np.where(part == 0, r, r * np.sqrt(rng.uniform(0.0, 1.0, count)))
    z = np.where(part == 0, rng.uniform(-hh, hh, count), np.where(part == 1, hh, -hh))
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)


_PARAM_KEYS = {"sphere": ("r",), "box": ("hx", "hy", "hz"), "cylinder": ("r", "hh")}


def shape_id(kind: str, params: dict, pose: RigidTransform, seed: int) -> str:
    body = f"{kind}|" + ",".join(f"{k}={params[k]!r}" for k in sorted(params))
    body += "|" + ",".join(repr(float(v)) for v in pose.rotation.ravel())
    body += "|" + ",".join(repr(float(v)) for v in pose.translation) + f"|{seed}"
    tag = ",".join(f"{k}={params[k]:g}" for k in _PARAM_KEYS.get(kind, ()))
    return f"{kind}:{tag}#" + hashlib.sha256(body.encode()).hexdigest()[:8]


def make_primitive(kind: str, params: dict, pose: RigidTransform | None = None,
                   count: int = DEFAULT_CLOUD, seed: int = 0) -> ObjectShape:
    if kind not in _PARAM_KEYS:
        raise GeometryError(f"unknown primitive kind {kind!r}")
    keys = _PARAM_KEYS[kind]
    missing = [k for k in keys if k not in params]
    if missing:
        raise GeometryError(f"{kind}: missing parameters {missing}")
    params = {k: float(params[k]) for k in keys}
    if any(not (v > 0) for v in params.values()):
        raise GeometryError(f"{kind}: non-positive dimension in {params}")
    if count < MIN_CLOUD:
        raise GeometryError(f"cloud count must be >= {MIN_CLOUD}")
    pose = pose or RigidTransform()
    rng = np.random.default_rng(seed)
    local = _sample_surface(kind, params, count, rng)
    cloud = pose.apply(local)
    return ObjectShape(kind, params, pose, cloud, shape_id(kind, params, pose, seed))


def cloud_shape(points, normals=None, id: str | None = None) -> ObjectShape:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < MIN_CLOUD:
        raise GeometryError(f"cloud needs at least {MIN_CLOUD} points")
    nrm = None if normals is None else np.asarray(normals, dtype=float).reshape(-1, 3)
    if id is None:
        id = "cloud#" + hashlib.sha256(pts.tobytes()).hexdigest()[:8]
    return ObjectShape("cloud", {}, RigidTransform(), pts, id, nrm)


_SPEC_ALIASES = {"sphere": "sphere", "box": "box", "cyl": "cylinder", "cylinder": "cylinder"}


def parse_primitive_spec(spec: str) -> tuple[str, dict]:
    """``sphere:r=0.005``, ``box:hx=..,hy=..,hz=..``, ``cyl:r=..,hh=..``."""
    try:
        head, body = spec.split(":", 1)
        kind = _SPEC_ALIASES[head.strip()]
        params = {}
        for item in body.split(","):
            k, v = item.split("=")
            params[k.strip()] = float(v)
    except (ValueError, KeyError):
        raise GeometryError(f"bad primitive spec {spec!r}") from None
    if set(params) != set(_PARAM_KEYS[kind]):
        raise GeometryError(f"bad primitive spec {spec!r}: expected keys {_PARAM_KEYS[kind]}")
    return kind, params


def format_primitive_spec(kind: str, params: dict) -> str:
    head = "cyl" if kind == "cylinder" else kind
    return head + ":" + ",".join(f"{k}={params[k]!r}" for k in _PARAM_KEYS[kind])


# --------------------------------------------------------------------------
# meshes


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int, counter-clockwise seen from outside
    meta: dict = field(default_factory=dict)

    def edges(self) -> dict[tuple[int, int], int]:
        count: dict[tuple[int, int], int] = {}
        for f in self.faces:
            for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(a, b), max(a, b))
                count[key] = count.get(key, 0) + 1
        return count

    def euler_characteristic(self) -> int:
        used = np.unique(self.faces)
        return len(used) - len(self.edges()) + len(self.faces)

    def is_watertight(self) -> bool:
        return all(c == 2 for c in self.edges().values()) and self.euler_characteristic() == 2

    def face_normals(self) -> np.ndarray:
        v = self.vertices[self.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def volume(self) -> float:
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def area(self, faces=None) -> float:
        f = self.faces if faces is None else self.faces[faces]
        v = self.vertices[f]
        return float(0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum())


def convex_hull(points) -> Mesh:
    """Triangulated convex hull with outward winding; only hull vertices are kept."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 4:
        raise DegenerateHullError("convex hull needs at least 4 points")
    centered = pts - pts.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    scale = max(s[0], 1e-300)
    if s[2] <= 1e-12 * scale:
        raise DegenerateHullError("degenerate input: points are coplanar or collinear")
    try:
        hull = ConvexHull(pts)
    except QhullError as e:
        raise DegenerateHullError(f"degenerate input: {str(e).splitlines()[0]}") from None
    faces = hull.simplices.copy()
    # orient each triangle along Qhull's outward facet normal
    v = pts[faces]
    tri_n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = np.einsum("ij,ij->i", tri_n, hull.equations[:, :3]) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    used = np.unique(faces)
    remap = -np.ones(len(pts), dtype=int)
    remap[used] = np.arange(len(used))
    return Mesh(pts[used], remap[faces], {"hull_perturbation": 0.0, "source_indices": used.tolist()})


# --------------------------------------------------------------------------
# file formats


def write_ply(path, points, normals=None) -> None:
    pts = np.asarray(points, dtype=float)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property double x", "property double y", "property double z"]
    if normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
    lines.append("end_header")
    data = pts if normals is None else np.hstack([pts, np.asarray(normals, dtype=float)])
    for row in data:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GeometryError(f"{path}: not a PLY file")
    props, count, k = [], None, 1
    while k < len(lines) and lines[k].strip() != "end_header":
        tok = lines[k].split()
        if tok[:2] == ["format", "binary_little_endian"] or tok[:2] == ["format", "binary_big_endian"]:
            raise GeometryError(f"{path}: only ASCII PLY is supported")
        if tok[:2] == ["element", "vertex"]:
            count = int(tok[2])
        elif tok and tok[0] == "property" and count is not None and len(tok) == 3:
            props.append(tok[2])
        k += 1
    if count is None or props[:3] != ["x", "y", "z"]:
        raise GeometryError(f"{path}: missing vertex x y z properties")
    rows = np.array([[float(v) for v in lines[k + 1 + i].split()[: len(props)]] for i in range(count)])
    pts = rows[:, :3]
    normals = None
    if props[3:6] == ["nx", "ny", "nz"]:
        normals = rows[:, 3:6]
    return pts, normals
