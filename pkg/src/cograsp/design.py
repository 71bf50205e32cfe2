"""Contact-plane design: energies, joint plane/configuration optimisation and cover meshes."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import local_contact_samples
from .geometry import Mesh, ObjectShape, Plane, convex_hull
from .kinematics import (
    HandModel,
    RigidTransform,
    jacobian_q_derivative,
    kinematic_state,
    point_jacobian,
)
from .synthesis import descend


# surrogate weight used when a trained surrogate is supplied without an explicit weight;
# its E_phys sums -s over every (q, object) pair, so it is much larger than the geometric terms
DEFAULT_W_PHYS = 0.01


@dataclass(frozen=True)
class DesignWeights:
    att: float = 1.0
    rep: float = 1.0
    mani: float = 0.05
    phys: float = 0.0


@dataclass(frozen=True)
class DesignOptions:
    iterations: int = 300
    batch: int = 16
    n_contacts: int = 4
    step: float = 1e-2
    p_scale: float = 0.05  # metres per optimisation unit for the plane point
    weights: DesignWeights = DesignWeights()
    optimize_q: bool = True
    memory: int = 10
    init_jitter: float = 0.1  # std-dev of the noise added to the initial unit normal
    seed: int = 0


# --------------------------------------------------------------------------
# energies


def split_params(theta) -> tuple[np.ndarray, np.ndarray, float]:
    theta = np.asarray(theta, dtype=float)
    p, nt = theta[:3], theta[3:6]
    norm = float(np.linalg.norm(nt))
    if norm == 0.0:
        raise ValueError("zero plane normal")
    return p, nt / norm, norm


def e_rep_hinge(phi) -> float:
    return float(np.maximum(0.0, -np.asarray(phi)).sum())


def e_rep_indicator(phi) -> float:
    phi = np.asarray(phi)
    return float((np.where(phi < 0, 1.0, 0.0) * np.abs(phi)).sum())


def finger_sides(model: HandModel) -> dict[str, float]:
    """+1 for the thumb (non-negative side of the plane), -1 for every other finger."""
    return {f: (1.0 if f == model.thumb else -1.0) for f in model.finger_names}


def design_terms(model: HandModel, theta, q, n_contacts: int = 4, grad: bool = True) -> dict:
    """E_att, E_rep, E_mani at one configuration, with gradients w.r.t. raw plane params and q.

    ``theta`` = [p, n~]; the normal is n~ / |n~| so gradients w.r.t. n~ are tangent to the sphere.
    """
    p, n, norm = split_params(theta)
    q = np.asarray(q, dtype=float)
    state = kinematic_state(model, q)
    d = model.dof
    g_n = {"att": np.zeros(3), "rep": np.zeros(3), "mani": np.zeros(3)}
    g_p = {"att": np.zeros(3), "rep": np.zeros(3), "mani": np.zeros(3)}
    g_q = {"att": np.zeros(d), "rep": np.zeros(d), "mani": np.zeros(d)}
    att = rep = mani = 0.0
    sides = finger_sides(model)

    for f in (model.thumb, model.index):
        T = state.links[model.finger(f).tip_link]
        dofs = list(model.finger_dofs[f])
        pts, _, _ = local_contact_samples(model, f, n_contacts)
        x = T.apply(pts)
        phi = (x - p) @ n
        att += float(np.abs(phi).sum())
        if grad:
            s = np.sign(phi)
            g_p["att"] -= s.sum() * n
            g_n["att"] += s @ (x - p)
            g_q["att"][dofs] += np.einsum("k,i,kij->j", s, n, point_jacobian(model, state, f, x))

        tip = T.translation
        J = point_jacobian(model, state, f, tip)
        v = J.T @ n
        m = float(np.linalg.norm(v))
        mani -= m
        if grad and m > 0:
            g_n["mani"] -= J @ v / m
            dJ = jacobian_q_derivative(model, state, f, tip)  # (3, n_f, n_f)
            g_q["mani"][dofs] -= np.einsum("j,i,ijk->k", v, n, dJ) / m

    for f in model.finger_names:
        T = state.links[model.finger(f).tip_link]
        v_pts = T.apply(model.samples(f).surface)
        side = sides[f]
        phi = side * ((v_pts - p) @ n)
        neg = phi < 0
        rep += float(-phi[neg].sum())
        if grad and neg.any():
            w = v_pts[neg]
            g_p["rep"] += side * neg.sum() * n
            g_n["rep"] -= side * (w - p).sum(axis=0)
            g_q["rep"][list(model.finger_dofs[f])] -= side * np.einsum(
                "i,kij->j", n, point_jacobian(model, state, f, w))

    out = {"att": att, "rep": rep, "mani": mani}
    if grad:
        tangent = (np.eye(3) - np.outer(n, n)) / norm
        for k in ("att", "rep", "mani"):
            out["g_theta_" + k] = np.concatenate([g_p[k], tangent @ g_n[k]])
            out["g_q_" + k] = g_q[k]
    return out


def design_energy(P: Plane, model: HandModel, q, weights: DesignWeights = DesignWeights(),
                  n_contacts: int = 4) -> dict:
    t = design_terms(model, P.params(), q, n_contacts, grad=False)
    total = weights.att * t["att"] + weights.rep * t["rep"] + weights.mani * t["mani"]
    return {"E_att": t["att"], "E_rep": t["rep"], "E_mani": t["mani"], "total": total}


def directional_manipulability(model: HandModel, q, finger: str, n) -> float:
    state = kinematic_state(model, q)
    J = point_jacobian(model, state, finger, state.links[model.finger(finger).tip_link].translation)
    return float(np.linalg.norm(J.T @ np.asarray(n, dtype=float)))


# --------------------------------------------------------------------------
# optimisation


@dataclass
class DesignResult:
    plane: Plane
    q_batch: np.ndarray
    history: list = field(default_factory=list)  # dicts: iter, E_att, E_rep, E_mani, E_phys, total
    anchor: int = 0  # index of the lowest-energy batch member

    @property
    def q_anchor(self) -> np.ndarray:
        return self.q_batch[self.anchor]


def _pinch_geometry(model: HandModel, q):
    state = kinematic_state(model, q)
    out = []
    for f in (model.thumb, model.index):
        T = state.links[model.finger(f).tip_link]
        pts, nrm, _ = local_contact_samples(model, f, 1)
        out.append((T.apply(pts[0]), T.rotation @ nrm[0]))
    return out


def initial_batch(model: HandModel, batch: int, rng: np.random.Generator, tries: int = 64,
                  reach: float = 0.05) -> np.ndarray:
    """In-limit configurations; each is the best of ``tries`` draws at closing the pinch.

    Score: pad apex distance (in units of ``reach``) plus how far the pad normals are from opposed.
    """
    out = []
    for _ in range(batch):
        qs = rng.uniform(model.lower, model.upper, (tries, model.dof))
        scores = []
        for q in qs:
            (xa, ca), (xb, cb) = _pinch_geometry(model, q)
            scores.append(np.linalg.norm(xa - xb) / reach + (1.0 + ca @ cb))
        out.append(qs[int(np.argmin(scores))])
    return np.array(out)


def initial_plane(model: HandModel, q_batch: np.ndarray, rng: np.random.Generator, jitter: float = 0.1) -> Plane:
    """Mid-point of the pad apexes; normal along the averaged pad normals, towards the thumb."""
    mids, dirs = [], []
    for q in q_batch:
        (xa, ca), (xb, cb) = _pinch_geometry(model, q)
        mids.append((xa + xb) / 2)
        dirs.append(cb - ca)
    n = np.mean(dirs, axis=0)
    n = n / np.linalg.norm(n) + jitter * rng.standard_normal(3)
    return Plane(np.mean(mids, axis=0), n)


class _PlaneProblem:
    def __init__(self, model, opts, B, q_fixed, surrogate, observations):
        self.model, self.opts, self.B = model, opts, B
        self.q_fixed = q_fixed
        self.surrogate, self.obs = surrogate, observations
        self.phys_ref = None

    def unpack(self, z):
        theta = np.concatenate([z[:3] * self.opts.p_scale, z[3:6]])
        if self.opts.optimize_q:
            q = z[6:].reshape(self.B, self.model.dof)
        else:
            q = self.q_fixed
        return theta, q

    def project(self, z):
        z = z.copy()
        z[3:6] /= np.linalg.norm(z[3:6])
        if self.opts.optimize_q:
            d = self.model.dof
            q = z[6:].reshape(self.B, d)
            z[6:] = np.clip(q, self.model.lower, self.model.upper).ravel()
        return z

    def phys(self, theta, q):
        if self.surrogate is None or self.opts.weights.phys == 0:
            return 0.0, np.zeros(6), np.zeros_like(q), np.zeros(len(q))
        return self.surrogate.design_phys(theta, q, self.obs)

    def __call__(self, z):
        w = self.opts.weights
        theta, q = self.unpack(z)
        g_theta = np.zeros(6)
        g_q = np.zeros_like(q)
        sums = {"att": 0.0, "rep": 0.0, "mani": 0.0}
        per_member = np.zeros(self.B)
        for b in range(self.B):
            t = design_terms(self.model, theta, q[b], self.opts.n_contacts)
            for k, wk in (("att", w.att), ("rep", w.rep), ("mani", w.mani)):
                sums[k] += t[k]
                g_theta += wk * t["g_theta_" + k]
                g_q[b] += wk * t["g_q_" + k]
            per_member[b] = w.att * t["att"] + w.rep * t["rep"] + w.mani * t["mani"]
        e_phys, gt_phys, gq_phys, member_phys = self.phys(theta, q)
        per_member += w.phys * member_phys
        if self.phys_ref is None:
            self.phys_ref = e_phys
        geo = w.att * sums["att"] + w.rep * sums["rep"] + w.mani * sums["mani"]
        # offset by the starting value: a flat surrogate leaves the accepted steps untouched
        value = geo + w.phys * (e_phys - self.phys_ref)
        g_theta += w.phys * gt_phys
        g_q += w.phys * gq_phys
        grad = np.concatenate([g_theta[:3] * self.opts.p_scale, g_theta[3:]])
        if self.opts.optimize_q:
            grad = np.concatenate([grad, g_q.ravel()])
        info = {"E_att": sums["att"], "E_rep": sums["rep"], "E_mani": sums["mani"], "E_phys": e_phys,
                "total": geo + w.phys * e_phys, "member": per_member}
        return value, grad, info


def optimize_plane(model: HandModel, objects: Sequence[ObjectShape] = (), surrogate=None,
                   opts: DesignOptions = DesignOptions(), q_init=None, plane_init: Plane | None = None) -> DesignResult:
    """Jointly descend a shared plane and a batch of configurations.

    ``surrogate`` needs ``observe(shape)`` and ``design_phys(theta, q_batch, observations)``.
    """
    rng = np.random.default_rng(opts.seed)
    if q_init is None:
        if opts.batch < 1:
            raise ValueError("empty q batch")
        q_init = initial_batch(model, opts.batch, rng)
    q_init = np.atleast_2d(np.asarray(q_init, dtype=float))
    if len(q_init) == 0:
        raise ValueError("empty q batch")
    P0 = plane_init if plane_init is not None else initial_plane(model, q_init, rng, opts.init_jitter)
    if surrogate is not None and opts.weights.phys > 0 and not objects:
        raise ValueError("the physics term needs at least one object")
    obs = [surrogate.observe(o) for o in objects] if surrogate is not None else []
    B = len(q_init)
    prob = _PlaneProblem(model, opts, B, q_init, surrogate, obs)
    z0 = np.concatenate([P0.p / opts.p_scale, P0.n])
    if opts.optimize_q:
        z0 = np.concatenate([z0, q_init.ravel()])

    history = []

    def record(z, f, info):
        row = {"iter": len(history)}
        row.update({k: float(info[k]) for k in ("E_att", "E_rep", "E_mani", "E_phys", "total")})
        history.append(row)

    z, f, info, _, _ = descend(prob, z0, opts.iterations, opts.step, prob.project, None,
                               memory=opts.memory, callback=record)
    theta, q = prob.unpack(z)
    anchor = int(np.argmin(info["member"]))
    return DesignResult(Plane(theta[:3], theta[3:]), np.array(q, copy=True), history, anchor)


# --------------------------------------------------------------------------
# local frames and covers


def localize_plane(P_world: Plane, tip_pose: RigidTransform) -> Plane:
    R, t = tip_pose.rotation, tip_pose.translation
    return Plane(R.T @ (P_world.p - t), R.T @ P_world.n)


def make_covers(model: HandModel, plane: Plane, q_anchor) -> dict[str, Plane]:
    """Thumb and index cover planes in their tip frames; each finger body ends up on the non-negative side."""
    links = kinematic_state(model, q_anchor).links
    covers = {}
    for f in (model.thumb, model.index):
        P = plane if f == model.thumb else plane.flipped()
        covers[f] = localize_plane(P, links[model.finger(f).tip_link])
    return covers


def icosahedron_directions() -> np.ndarray:
    g = (1 + 5 ** 0.5) / 2
    v = []
    for a in (-1, 1):
        for b in (-g, g):
            v += [(0, a, b), (a, b, 0), (b, 0, a)]
    v = np.array(v, dtype=float)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass(frozen=True)
class CoverMesh:
    mesh: Mesh
    plane: Plane  # local frame
    inflation: float
    finger: str = ""

    def flat_face(self, tol: float = 1e-6) -> np.ndarray:
        """Indices of faces whose outward normal is -n (the contact face)."""
        return np.flatnonzero(self.mesh.face_normals() @ self.plane.n < -1 + tol)


def generate_cover(P_local: Plane, points, inflation: float = 1e-3, finger: str = "") -> CoverMesh:
    """Hull of the inflated fingertip samples together with their projections onto the plane.

    Inflated points that land on the wrong side of the plane are pulled back onto it.
    """
    pts = np.asarray(points, dtype=float)
    if inflation < 0:
        raise ValueError("inflation must be non-negative")
    if inflation > 0:
        pts = (pts[:, None, :] + inflation * icosahedron_directions()[None]).reshape(-1, 3)
    phi = (pts - P_local.p) @ P_local.n
    proj = pts - phi[:, None] * P_local.n
    body = np.where((phi < 0)[:, None], proj, pts)
    mesh = convex_hull(np.vstack([body, proj]))
    meta = dict(mesh.meta)
    meta.update({"plane": P_local.to_json(), "inflation": float(inflation)})
    mesh = Mesh(mesh.vertices, mesh.faces, meta)
    return CoverMesh(mesh, P_local, float(inflation), finger)


def cover_points(model: HandModel, finger: str) -> np.ndarray:
    s = model.samples(finger)
    return np.vstack([s.surface, s.points])


def generate_covers(model: HandModel, plane: Plane, q_anchor, inflation: float = 1e-3) -> dict[str, CoverMesh]:
    return {f: generate_cover(P, cover_points(model, f), inflation, f)
            for f, P in make_covers(model, plane, q_anchor).items()}


# --------------------------------------------------------------------------
# mesh files


def write_stl(path, mesh: Mesh, name: str = "cover") -> None:
    normals = mesh.face_normals()
    lines = [f"solid {name}"]
    for face, nrm in zip(mesh.faces, normals):
        lines.append("  facet normal {:.17g} {:.17g} {:.17g}".format(*nrm))
        lines.append("    outer loop")
        for v in mesh.vertices[face]:
            lines.append("      vertex {:.17g} {:.17g} {:.17g}".format(*v))
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_stl(path) -> Mesh:
    """ASCII STL; vertices are merged by exact coordinate match."""
    verts, index, faces, cur = [], {}, [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if tok and tok[0] == "vertex":
            key = tuple(float(t) for t in tok[1:4])
            if key not in index:
                index[key] = len(verts)
                verts.append(key)
            cur.append(index[key])
        elif tok and tok[0] == "endloop":
            faces.append(cur)
            cur = []
    return Mesh(np.array(verts, dtype=float), np.array(faces, dtype=int), {})


def write_obj(path, mesh: Mesh) -> None:
    lines = ["v {:.17g} {:.17g} {:.17g}".format(*v) for v in mesh.vertices]
    lines += ["f {} {} {}".format(*(f + 1)) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> Mesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return Mesh(np.array(verts, dtype=float), np.array(faces, dtype=int), {})
