"""Contact sampling, grasp map, grasp energies and friction-cone wrench feasibility."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import ObjectShape, Plane, project_to_plane
from .kinematics import (
    HandModel,
    KinematicState,
    RigidTransform,
    cross,
    kinematic_state,
    left_jacobian,
    point_jacobian,
    skew,
)

Covers = Mapping[str, Plane]


@dataclass(frozen=True)
class PowerWeights:
    wrench: float = 1.0
    dist: float = 10.0
    pen: float = 100.0


@dataclass(frozen=True)
class ContactSet:
    x: np.ndarray  # (K, 3) world positions
    c: np.ndarray  # (K, 3) unit normals (direction the finger pushes)
    finger: tuple[str, ...]
    sample: np.ndarray  # (K,) source sample index
    n_per_finger: int

    def of(self, finger: str) -> np.ndarray:
        return np.array([f == finger for f in self.finger])


def local_contact_samples(model: HandModel, finger: str, n: int, covers: Covers | None = None):
    """Local-frame contact points/normals for ``finger``, repeated cyclically up to ``n``."""
    s = model.samples(finger)
    if len(s.points) == 0:
        raise ValueError(f"finger {finger!r} has no stored contact samples")
    idx = np.arange(n) % len(s.points)
    pts, nrm = s.points[idx], s.normals[idx]
    if covers and finger in covers:
        P = covers[finger]
        pts = project_to_plane(P, pts)
        nrm = np.broadcast_to(-P.n, pts.shape).copy()
    return pts, nrm, idx


def local_surface_samples(model: HandModel, finger: str, covers: Covers | None = None) -> np.ndarray:
    """Fingertip body samples; a cover adds the body's projection onto the flat face."""
    s = model.samples(finger)
    if covers and finger in covers:
        P = covers[finger]
        return np.vstack([s.surface, project_to_plane(P, s.surface), project_to_plane(P, s.points)])
    return s.surface


def sample_fingertip_contacts(model: HandModel, q, fingers: Sequence[str], n: int,
                              covers: Covers | None = None,
                              wrist: RigidTransform | None = None) -> ContactSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not fingers:
        raise ValueError("fingers must be nonempty")
    state = kinematic_state(model, q, wrist)
    xs, cs, names, idxs = [], [], [], []
    for f in fingers:
        pts, nrm, idx = local_contact_samples(model, f, n, covers)
        T = state.links[model.finger(f).tip_link]
        xs.append(T.apply(pts))
        cs.append(nrm @ T.rotation.T)
        names += [f] * n
        idxs.append(idx)
    return ContactSet(np.vstack(xs), np.vstack(cs), tuple(names), np.concatenate(idxs), n)


def grasp_map(x: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """6 x 3m matrix [I ... I; [x_1]x ... [x_m]x], positions taken relative to ``reference``."""
    x = np.atleast_2d(x)
    if reference is not None:
        x = x - reference
    m = len(x)
    G = np.zeros((6, 3 * m))
    for i, xi in enumerate(x):
        G[:3, 3 * i:3 * i + 3] = np.eye(3)
        G[3:, 3 * i:3 * i + 3] = skew(xi)
    return G


def net_wrench(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """G c with torques about the contact centroid (vectorised, no G assembly)."""
    r = x - x.mean(axis=0)
    return np.concatenate([c.sum(axis=0), cross(r, c).sum(axis=0)])


def e_precise(contacts: ContactSet | tuple) -> float:
    """||G c||_2 with torque reference at the contact centroid."""
    x, c = (contacts.x, contacts.c) if isinstance(contacts, ContactSet) else contacts
    if len(x) < 1:
        raise ValueError("need at least one contact")
    return float(np.linalg.norm(net_wrench(np.asarray(x, float), np.asarray(c, float))))


def net_wrench_jacobian(x, c, dx, dc):
    """d(G c)/dtheta given contact derivatives dx, dc of shape (K, 3, P)."""
    r = x - x.mean(axis=0)
    dr = dx - dx.mean(axis=0)
    dforce = dc.sum(axis=0)
    # d(r x c) = dr x c + r x dc, vectorised over parameter axis
    dtorque = (cross(np.moveaxis(dr, 2, 1), c[:, None, :]) + cross(r[:, None, :], np.moveaxis(dc, 2, 1))).sum(axis=0)
    return np.vstack([dforce, dtorque.T])


# --------------------------------------------------------------------------
# world-frame samples with derivatives w.r.t. [wrist translation, wrist rotvec, q]


@dataclass
class SampleSet:
    """World samples with derivatives w.r.t. the 6 + dof parameter vector."""

    x: np.ndarray
    c: np.ndarray | None
    dx: np.ndarray  # (K, 3, 6 + dof)
    dc: np.ndarray | None
    finger: np.ndarray  # (K,) finger position in the hand


def _attach(model, state, wrist_r, finger, pts_local, nrm_local=None):
    T = state.links[model.finger(finger).tip_link]
    x = T.apply(pts_local)
    K = len(x)
    P = 6 + model.dof
    dx = np.zeros((K, 3, P))
    dx[:, :, :3] = np.eye(3)
    Jl = left_jacobian(wrist_r)
    rel = x - state.wrist.translation
    # d(R y)/dr = -[R y]_x J_l(r)
    dx[:, :, 3:6] = -np.einsum("kij,jl->kil", _skew_batch(rel), Jl)
    dofs = list(model.finger_dofs[finger])
    dx[:, :, [6 + k for k in dofs]] = point_jacobian(model, state, finger, x)
    if nrm_local is None:
        return x, None, dx, None
    c = nrm_local @ T.rotation.T
    dc = np.zeros((K, 3, P))
    dc[:, :, 3:6] = -np.einsum("kij,jl->kil", _skew_batch(c), Jl)
    for col, k in enumerate(dofs):
        if model.joints[model.movable[k]].type == "revolute":
            dc[:, :, 6 + k] = cross(state.joint_axis[k], c)
    return x, c, dx, dc


def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def contact_samples_with_grad(model: HandModel, state: KinematicState, wrist_r, fingers, n,
                              covers: Covers | None = None) -> SampleSet:
    parts = []
    for f in fingers:
        pts, nrm, _ = local_contact_samples(model, f, n, covers)
        parts.append(_attach(model, state, wrist_r, f, pts, nrm) + (model.finger_names.index(f),))
    return SampleSet(
        np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]), np.concatenate([p[3] for p in parts]),
        np.concatenate([np.full(len(p[0]), p[4]) for p in parts]),
    )


def surface_samples_with_grad(model: HandModel, state: KinematicState, wrist_r, fingers,
                              covers: Covers | None = None) -> SampleSet:
    parts = []
    for f in fingers:
        pts = local_surface_samples(model, f, covers)
        x, _, dx, _ = _attach(model, state, wrist_r, f, pts)
        parts.append((x, dx, model.finger_names.index(f)))
    return SampleSet(np.vstack([p[0] for p in parts]), None, np.concatenate([p[1] for p in parts]), None,
                     np.concatenate([np.full(len(p[0]), p[2]) for p in parts]))


def _abs_sdf_term(shape, s: SampleSet):
    val, g = shape.sdf(s.x)
    sgn = np.sign(val)
    return float(np.abs(val).sum()), np.einsum("k,ki,kip->p", sgn, g, s.dx), val


def _pen_term(shape, s: SampleSet):
    val, g = shape.sdf(s.x)
    pen = np.maximum(0.0, -val)
    # d(pen^2) = -2 pen grad . dx
    return float((pen ** 2).sum()), np.einsum("k,ki,kip->p", -2.0 * pen, g, s.dx), pen


def grasp_energy_terms(model: HandModel, q, wrist_params, shape: ObjectShape, fingers, n,
                       covers: Covers | None = None, with_grad: bool = True) -> dict:
    """Wrench residual, contact gap and penetration terms with gradients over [wrist(6), q]."""
    wrist_params = np.asarray(wrist_params, dtype=float)
    wrist = RigidTransform.from_params(wrist_params)
    state = kinematic_state(model, q, wrist)
    cs = contact_samples_with_grad(model, state, wrist_params[3:], fingers, n, covers)
    ss = surface_samples_with_grad(model, state, wrist_params[3:], model.finger_names, covers)
    w = net_wrench(cs.x, cs.c)
    ew = float(np.linalg.norm(w))
    dw = net_wrench_jacobian(cs.x, cs.c, cs.dx, cs.dc)
    g_wrench = dw.T @ w / ew if ew > 0 else np.zeros(dw.shape[1])
    dist, g_dist, gap = _abs_sdf_term(shape, cs)
    pen, g_pen, depth = _pen_term(shape, ss)
    return {
        "wrench": ew, "dist": dist, "pen": pen,
        "g_wrench": g_wrench, "g_dist": g_dist, "g_pen": g_pen,
        "gap": gap, "contact_finger": cs.finger, "depth": depth, "surface_finger": ss.finger,
        "x": cs.x, "c": cs.c,
    }


def e_power(model: HandModel, q, shape: ObjectShape, weights: PowerWeights = PowerWeights(),
            wrist: RigidTransform | None = None, n: int = 4, covers: Covers | None = None) -> float:
    """Force-closure residual over all fingers plus contact-gap and penetration penalties."""
    if not shape.signed:
        raise ValueError("power energy needs a signed SDF (cloud-only shape without normals)")
    wp = (wrist or RigidTransform()).to_params()
    t = grasp_energy_terms(model, q, wp, shape, model.finger_names, n, covers, with_grad=False)
    return weights.wrench * t["wrench"] + weights.dist * t["dist"] + weights.pen * t["pen"]


# --------------------------------------------------------------------------
# friction cones


@dataclass(frozen=True)
class WrenchResult:
    feasible: bool
    residual: float
    lambdas: np.ndarray
    iterations: int


def _tangent_basis(nrm):
    a = np.where(np.abs(nrm[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    t1 = cross(nrm, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = cross(nrm, t1)
    return t1, t2


def cone_generators(x, nrm, mu, m_edges, reference=None, torque_scale=1.0):
    """Wrench matrix (6, K * m_edges) of discretised friction-cone edges."""
    x = np.atleast_2d(np.asarray(x, float))
    nrm = np.atleast_2d(np.asarray(nrm, float))
    nrm = nrm / np.linalg.norm(nrm, axis=1, keepdims=True)
    ref = x.mean(axis=0) if reference is None else np.asarray(reference, float)
    t1, t2 = _tangent_basis(nrm)
    ang = 2 * np.pi * np.arange(m_edges) / m_edges
    f = nrm[:, None, :] + mu * (np.cos(ang)[None, :, None] * t1[:, None, :] + np.sin(ang)[None, :, None] * t2[:, None, :])
    tau = cross((x - ref)[:, None, :], f) / torque_scale
    return np.concatenate([f, tau], axis=2).reshape(-1, 6).T


def wrench_resistance(contacts: ContactSet | tuple, mu: float, w_ext, m_edges: int = 8, tol: float = 1e-4,
                      max_iter: int = 500, reference=None, torque_scale: float | None = None) -> WrenchResult:
    """min_{lambda >= 0} ||A lambda + w_ext|| by accelerated projected gradient, step 1/L.

    Torques are taken about ``reference`` (contact centroid by default) and divided by
    ``torque_scale`` (largest contact lever arm by default) so that both halves of the
    wrench are in newtons.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if m_edges < 4:
        raise ValueError("m_edges must be >= 4")
    x, c = (contacts.x, contacts.c) if isinstance(contacts, ContactSet) else contacts
    x = np.atleast_2d(np.asarray(x, float))
    w = np.asarray(w_ext, float).copy()
    ref = x.mean(axis=0) if reference is None else np.asarray(reference, float)
    if torque_scale is None:
        lever = np.linalg.norm(x - ref, axis=1).max() if len(x) else 0.0
        torque_scale = lever if lever > 0 else 1.0
    w[3:] /= torque_scale
    if len(x) == 0:
        r = float(np.linalg.norm(w))
        return WrenchResult(r <= tol, r, np.zeros(0), 0)
    A = cone_generators(x, c, mu, m_edges, ref, torque_scale)
    lam = np.zeros(A.shape[1])
    res = float(np.linalg.norm(w))
    if res <= tol * 1e-3:
        return WrenchResult(True, res, lam, 0)
    L = float(np.linalg.norm(A, 2) ** 2)
    AtA, Atw = A.T @ A, A.T @ w
    y, t, prev_obj = lam.copy(), 1.0, np.inf
    it = 0
    for it in range(1, max_iter + 1):
        new = np.maximum(0.0, y - (AtA @ y + Atw) / L)
        r_vec = A @ new + w
        obj = float(r_vec @ r_vec)
        if obj > prev_obj:
            # adaptive restart keeps the sequence monotone
            t, y = 1.0, lam.copy()
            new = np.maximum(0.0, y - (AtA @ y + Atw) / L)
            r_vec = A @ new + w
            obj = float(r_vec @ r_vec)
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = new + ((t - 1) / t_next) * (new - lam)
        lam, t, prev_obj = new, t_next, obj
        if np.sqrt(obj) <= tol * 1e-3:
            break
    res = float(np.sqrt(prev_obj))
    return WrenchResult(res <= tol, res, lam, it)
