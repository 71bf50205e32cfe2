"""Grasp pose optimisation (precise thumb-index and power) and pre-grasp / overshoot motions."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .energy import (
    Covers,
    PowerWeights,
    grasp_energy_terms,
    local_contact_samples,
    sample_fingertip_contacts,
)
from .geometry import ObjectShape, Plane
from .kinematics import (
    HandModel,
    RigidTransform,
    kinematic_state,
    point_jacobian,
    rotvec_to_matrix,
)


@dataclass(frozen=True)
class SynthOptions:
    iterations: int = 500
    step: float = 1e-2
    n_contacts: int = 4
    w_gap: float = 1.0
    # squared-metre penalty; large enough that trading depth for gap never pays
    w_pen: float = 1e5
    tau: float = 1e-3
    max_penetration: float = 5e-4
    contact_tol: float = 1e-3
    stop_gap: float = 2e-4
    stop_tau: float = 1e-4
    trans_scale: float = 0.05
    gradient: str = "analytic"  # or "fd"
    fd_step: float = 1e-6
    # metre-scale gaps need a heavier distance weight; pen keeps depth under 0.5 mm
    power_weights: PowerWeights = PowerWeights(wrench=1.0, dist=100.0, pen=1e6)


@dataclass
class GraspCandidate:
    wrist: np.ndarray  # [tx, ty, tz, ax, ay, az]
    q: np.ndarray
    mode: str
    energy: float
    converged: bool
    seed: int
    object_id: str = ""
    reason: str = ""
    e_precise: float = float("nan")
    max_penetration: float = 0.0
    min_gap: float = float("nan")
    iterations: int = 0
    history: list = field(default_factory=list)

    @property
    def wrist_transform(self) -> RigidTransform:
        return RigidTransform.from_params(self.wrist)

    def to_record(self) -> dict:
        return {
            "object_id": self.object_id, "mode": self.mode, "seed": int(self.seed),
            "wrist": [float(v) for v in self.wrist], "q": [float(v) for v in self.q],
            "energy": float(self.energy), "converged": bool(self.converged), "reason": self.reason,
            "e_precise": float(self.e_precise), "max_penetration": float(self.max_penetration),
            "iterations": int(self.iterations),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GraspCandidate":
        return cls(np.array(rec["wrist"], float), np.array(rec["q"], float), rec["mode"], rec["energy"],
                   rec["converged"], rec["seed"], rec.get("object_id", ""), rec.get("reason", ""),
                   rec.get("e_precise", float("nan")), rec.get("max_penetration", 0.0),
                   iterations=rec.get("iterations", 0))


@dataclass
class GraspTrajectory:
    waypoints: list  # [(wrist params, q)] for pre-grasp, grasp, overshoot
    alpha: float
    dq: np.ndarray | None = None

    def to_records(self) -> list:
        return [{"wrist": [float(v) for v in w], "q": [float(v) for v in q]} for w, q in self.waypoints]


# --------------------------------------------------------------------------
# gradient descent with backtracking


def descend(fun: Callable, z0: np.ndarray, iterations: int, step: float,
            project: Callable | None = None, stop: Callable | None = None,
            bounds: tuple | None = None, memory: int = 10, max_halvings: int = 40,
            armijo: float = 1e-4, callback: Callable | None = None):
    """Descent with Armijo backtracking along a limited-memory quasi-Newton direction.

    ``fun(z) -> (value, grad, info)``. With ``memory=0`` this is plain steepest descent
    whose first trial step is ``step``. Accepted energies are non-increasing.
    ``callback(z, value, info)`` sees the start point and every accepted iterate.
    Returns (z, value, info, history, iterations).
    """
    z = np.array(z0, dtype=float)
    if project is not None:
        z = project(z)
    lo, hi = bounds if bounds is not None else (None, None)
    f, g, info = fun(z)
    history = [f]
    if callback is not None:
        callback(z, f, info)
    S, Y = [], []
    eta0 = step
    it = 0
    for it in range(iterations):
        if stop is not None and stop(info):
            return z, f, info, history, it
        d = _lbfgs_direction(g, S, Y) if memory else -g
        if lo is not None:
            # freeze coordinates sitting on a bound and pushed outward
            blocked = ((z <= lo) & (d < 0)) | ((z >= hi) & (d > 0))
            d[blocked] = 0.0
        if g @ d >= 0:
            S, Y = [], []
            d = -g
        eta = 1.0 if (memory and S) else eta0
        accepted = False
        for _ in range(max_halvings):
            cand = z + eta * d
            if project is not None:
                cand = project(cand)
            decrease = g @ (z - cand)
            if decrease <= 0:
                eta *= 0.5
                continue
            fc, gc, ic = fun(cand)
            if fc <= f - armijo * decrease:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            if S:
                S, Y = [], []
                continue
            return z, f, info, history, it
        s_vec, y_vec = cand - z, gc - g
        if memory and s_vec @ y_vec > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        if not memory:
            eta0 = eta * 1.5
        z, f, g, info = cand, fc, gc, ic
        history.append(f)
        if callback is not None:
            callback(z, f, info)
    else:
        it = iterations
    return z, f, info, history, it


def _lbfgs_direction(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if S:
        q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return -q


def fd_gradient(fun_value: Callable, z: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(z)
    for k in range(len(z)):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (fun_value(z + e) - fun_value(z - e)) / (2 * h)
    return g


# --------------------------------------------------------------------------
# initialisation and helpers


def _finger_reach(model: HandModel) -> float:
    state = kinematic_state(model, model.zero_config())
    return max(np.linalg.norm(state.links[f.tip_link].translation) for f in model.fingers)


def look_rotation(approach: np.ndarray, roll: float) -> np.ndarray:
    """Rotation whose x axis is ``approach``, rolled by ``roll`` about it."""
    x = approach / np.linalg.norm(approach)
    ref = np.array([0.0, 0.0, 1.0]) if abs(x[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    y = np.cross(ref, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    R = np.stack([x, y, z], axis=1)
    return R @ rotvec_to_matrix(np.array([roll, 0.0, 0.0]))


def initial_pose(model: HandModel, shape: ObjectShape, seed: int, fingers: Sequence[str]):
    """Wrist on a sphere around the object facing its centre; joints drawn mid-range."""
    rng = np.random.default_rng(seed)
    az = rng.uniform(0, 2 * np.pi)
    el = np.arcsin(rng.uniform(-1, 1))
    roll = rng.uniform(-np.pi, np.pi)
    u = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    R = look_rotation(-u, roll)
    state0 = kinematic_state(model, model.zero_config())
    bases = np.array([state0.joint_origin[model.finger_dofs[f][0]] for f in fingers])
    lateral = bases.mean(axis=0)
    lateral[0] = 0.0
    radius = shape.bounding_radius + _finger_reach(model)
    t = shape.center + radius * u - R @ lateral
    q = model.zero_config()
    mid = 0.5 * (model.lower + model.upper)
    span = 0.25 * (model.upper - model.lower)
    free = [k for f in fingers for k in model.finger_dofs[f]]
    q[free] = rng.uniform(mid[free] - span[free], mid[free] + span[free])
    from .kinematics import matrix_to_rotvec

    return np.concatenate([t, matrix_to_rotvec(R)]), model.clamp(q)


@lru_cache(maxsize=64)
def _max_aperture_cached(model: HandModel, covers_items, n: int) -> float:
    covers = {k: Plane(np.array(p), np.array(nv)) for k, p, nv in covers_items} if covers_items else None
    rng = np.random.default_rng(12345)
    best = 0.0
    thumb, index = model.thumb, model.index
    free = list(model.finger_dofs[thumb]) + list(model.finger_dofs[index])
    cos_tol = np.cos(np.deg2rad(20.0))
    for _ in range(3000):
        q = model.zero_config()
        q[free] = rng.uniform(model.lower[free], model.upper[free])
        cs = sample_fingertip_contacts(model, q, [thumb, index], n, covers)
        t, i = cs.of(thumb), cs.of(index)
        ct, ci = cs.c[t].sum(0), cs.c[i].sum(0)
        ct /= np.linalg.norm(ct)
        ci /= np.linalg.norm(ci)
        if ct @ ci > -cos_tol:
            continue
        gap = (cs.x[i].mean(0) - cs.x[t].mean(0)) @ ct
        best = max(best, gap)
    return float(best)


def max_aperture(model: HandModel, covers: Covers | None = None, n: int = 4) -> float:
    """Largest opposed thumb-index pad separation reachable within joint limits."""
    items = None
    if covers:
        items = tuple(sorted((k, tuple(v.p), tuple(v.n)) for k, v in covers.items()))
    return _max_aperture_cached(model, items, n)


# --------------------------------------------------------------------------
# optimisation problems


class _Problem:
    """Energy over z = [t / trans_scale, rotvec, q_free]."""

    def __init__(self, model, shape, opts, fingers, free_fingers, covers, mode, q_init):
        self.model, self.shape, self.opts, self.covers, self.mode = model, shape, opts, covers, mode
        self.fingers = list(fingers)
        self.free = [k for f in free_fingers for k in model.finger_dofs[f]]
        self.q_base = np.array(q_init, dtype=float)
        self.cols = [0, 1, 2, 3, 4, 5] + [6 + k for k in self.free]
        self.lo = np.concatenate([np.full(6, -np.inf), model.lower[self.free]])
        self.hi = np.concatenate([np.full(6, np.inf), model.upper[self.free]])

    def unpack(self, z):
        wrist = np.concatenate([z[:3] * self.opts.trans_scale, z[3:6]])
        q = self.q_base.copy()
        q[self.free] = z[6:]
        return wrist, q

    def pack(self, wrist, q):
        return np.concatenate([np.asarray(wrist[:3]) / self.opts.trans_scale, wrist[3:6], np.asarray(q)[self.free]])

    def project(self, z):
        return np.clip(z, self.lo, self.hi)

    def terms(self, z):
        wrist, q = self.unpack(z)
        return grasp_energy_terms(self.model, q, wrist, self.shape, self.fingers, self.opts.n_contacts, self.covers)

    def weights(self):
        o = self.opts
        if self.mode == "precise":
            return 1.0, o.w_gap, o.w_pen
        w = o.power_weights
        return w.wrench, w.dist, w.pen

    def value(self, z):
        t = self.terms(z)
        ww, wd, wp = self.weights()
        return ww * t["wrench"] + wd * t["dist"] + wp * t["pen"]

    def __call__(self, z):
        t = self.terms(z)
        ww, wd, wp = self.weights()
        f = ww * t["wrench"] + wd * t["dist"] + wp * t["pen"]
        if self.opts.gradient == "fd":
            g = fd_gradient(self.value, z, self.opts.fd_step)
        else:
            g_full = ww * t["g_wrench"] + wd * t["g_dist"] + wp * t["g_pen"]
            g = g_full[self.cols]
            g[:3] *= self.opts.trans_scale
        return f, g, t

    def gradient(self, z):
        return self(z)[1]


def _summaries(t, fingers, model):
    gaps = np.abs(t["gap"])
    per_finger = [gaps[t["contact_finger"] == model.finger_names.index(f)].min() for f in fingers]
    return float(np.max(per_finger)), float(np.max(t["depth"])) if len(t["depth"]) else 0.0


def synthesize_precise_grasp(model: HandModel, shape: ObjectShape, seed: int,
                             opts: SynthOptions = SynthOptions(), covers: Covers | None = None,
                             init: tuple | None = None) -> GraspCandidate:
    fingers = [model.thumb, model.index]
    wrist0, q0 = init if init is not None else initial_pose(model, shape, seed, fingers)
    prob = _Problem(model, shape, opts, fingers, fingers, covers, "precise", q0)
    z0 = prob.project(prob.pack(wrist0, q0))
    if shape.min_width > max_aperture(model, covers, opts.n_contacts):
        f0, _, t0 = prob(z0)
        wrist, q = prob.unpack(z0)
        return GraspCandidate(wrist, q, "precise", f0, False, seed, shape.id, "aperture",
                              t0["wrench"], _summaries(t0, fingers, model)[1], history=[f0])

    def stop(t):
        gap, pen = _summaries(t, fingers, model)
        return t["wrench"] < opts.stop_tau and pen < opts.max_penetration and gap <= opts.stop_gap

    z, f, t, hist, its = descend(prob, z0, opts.iterations, opts.step, prob.project, stop,
                                 (prob.lo, prob.hi))
    gap, pen = _summaries(t, fingers, model)
    converged = t["wrench"] < opts.tau and pen < opts.max_penetration
    reason = "" if converged else ("penetration" if pen >= opts.max_penetration else "wrench_residual")
    wrist, q = prob.unpack(z)
    return GraspCandidate(wrist, q, "precise", f, converged, seed, shape.id, reason, t["wrench"], pen, gap, its, hist)


def synthesize_power_grasp(model: HandModel, shape: ObjectShape, seed: int,
                           opts: SynthOptions = SynthOptions(), covers: Covers | None = None,
                           init: tuple | None = None) -> GraspCandidate:
    if not shape.signed:
        raise ValueError("power grasp synthesis needs a signed SDF")
    fingers = model.finger_names
    wrist0, q0 = init if init is not None else initial_pose(model, shape, seed, fingers)
    prob = _Problem(model, shape, opts, fingers, fingers, covers, "power", q0)
    z0 = prob.project(prob.pack(wrist0, q0))

    z, f, t, hist, its = descend(prob, z0, opts.iterations, opts.step, prob.project, None,
                                 (prob.lo, prob.hi))
    gap, pen = _summaries(t, fingers, model)
    converged = gap <= opts.contact_tol and pen < opts.max_penetration
    reason = "" if converged else ("penetration" if pen >= opts.max_penetration else "no_contact")
    wrist, q = prob.unpack(z)
    return GraspCandidate(wrist, q, "power", f, converged, seed, shape.id, reason, t["wrench"], pen, gap, its, hist)


def candidate_key(c: GraspCandidate):
    """Ordering for picking the best converged seed."""
    return (not c.converged, c.e_precise, c.max_penetration, c.seed)


# --------------------------------------------------------------------------
# motions


def pinv_truncated(J: np.ndarray, cutoff: float = 1e-8) -> np.ndarray:
    """Moore-Penrose inverse by SVD, dropping singular values below ``cutoff``."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def _pad_points(model, q, fingers, wrist, covers, n):
    state = kinematic_state(model, q, wrist)
    out = {}
    for f in fingers:
        pts, _, _ = local_contact_samples(model, f, n, covers)
        x = state.links[model.finger(f).tip_link].apply(pts).mean(axis=0)
        out[f] = (x, point_jacobian(model, state, f, x))
    return out


def pinch_step(model: HandModel, q, alpha: float, direction=None, fingers=None,
               wrist: RigidTransform | None = None, covers: Covers | None = None, n: int = 4):
    """Joint increment moving thumb by -alpha d and index by +alpha d (first order)."""
    thumb, index = fingers or (model.thumb, model.index)
    pads = _pad_points(model, q, (thumb, index), wrist, covers, n)
    if direction is None:
        d = pads[index][0] - pads[thumb][0]
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            raise ValueError("thumb and index contact centroids coincide; pass an explicit direction")
        d = d / norm
    else:
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
    dq = np.zeros(model.dof)
    dq[list(model.finger_dofs[thumb])] = -alpha * pinv_truncated(pads[thumb][1]) @ d
    dq[list(model.finger_dofs[index])] = alpha * pinv_truncated(pads[index][1]) @ d
    return dq, d


def parallel_pinch_motion(model: HandModel, q, alpha: float, direction=None, fingers=None,
                          overshoot_alpha: float | None = None, wrist=None,
                          covers: Covers | None = None, n: int = 4, clamp: bool = True) -> GraspTrajectory:
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    q = np.asarray(q, float)
    wrist_p = (wrist or RigidTransform()).to_params() if not isinstance(wrist, np.ndarray) else wrist
    wrist_t = RigidTransform.from_params(wrist_p)
    dq, d = pinch_step(model, q, alpha, direction, fingers, wrist_t, covers, n)
    a_over = alpha if overshoot_alpha is None else overshoot_alpha
    dq_over = dq * (a_over / alpha) if alpha > 0 else dq
    fix = model.clamp if clamp else (lambda v: v)
    way = [(wrist_p, fix(q + dq)), (wrist_p, q.copy()), (wrist_p, fix(q - dq_over))]
    return GraspTrajectory(way, alpha, dq)


def sdf_push_motion(model: HandModel, q, shape: ObjectShape, delta: float, wrist=None,
                    fingers: Sequence[str] | None = None) -> np.ndarray:
    """One pseudoinverse step moving each fingertip by ``delta`` against the SDF gradient."""
    if not shape.signed:
        raise ValueError("SDF push needs a signed SDF")
    q = np.asarray(q, float)
    if delta == 0:
        return q.copy()
    wrist_t = wrist if isinstance(wrist, RigidTransform) or wrist is None else RigidTransform.from_params(wrist)
    state = kinematic_state(model, q, wrist_t)
    out = q.copy()
    for f in fingers or model.finger_names:
        tip = state.links[model.finger(f).tip_link].translation
        _, g = shape.sdf(tip[None])
        J = point_jacobian(model, state, f, tip)
        out[list(model.finger_dofs[f])] += pinv_truncated(J) @ (-delta * g[0])
    return model.clamp(out)


def pad_distance(model, q, covers=None, n=4) -> float:
    pads = _pad_points(model, q, (model.thumb, model.index), None, covers, n)
    return float(np.linalg.norm(pads[model.index][0] - pads[model.thumb][0]))


def aperture_to_config(model: HandModel, q_ref, aperture: float, covers: Covers | None = None,
                       n: int = 4, step_max: float = 1e-3, tol: float = 1e-6, max_steps: int = 2000):
    """Walk the parallel-pinch direction until the pad distance equals ``aperture``.

    Returns (q, reached). ``reached`` is False when joint limits stop the walk.
    """
    if aperture < 0:
        raise ValueError("aperture must be non-negative")
    q = model.clamp(q_ref)
    for _ in range(max_steps):
        dist = pad_distance(model, q, covers, n)
        err = aperture - dist
        if abs(err) <= tol:
            return q, True
        move = float(np.clip(err, -step_max, step_max))
        dq, _ = pinch_step(model, q, 0.5 * move, covers=covers, n=n)
        q_new = model.clamp(q + dq)
        if np.array_equal(q_new, q):
            break
        if abs(aperture - pad_distance(model, q_new, covers, n)) >= abs(err):
            # limits block further progress
            step_max *= 0.5
            if step_max < 1e-7:
                break
            continue
        q = q_new
    return q, abs(aperture - pad_distance(model, q, covers, n)) <= 5e-4
