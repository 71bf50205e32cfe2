"""Quasi-static grasp evaluation standing in for simulator filtering, and label generation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .energy import (
    Covers,
    local_contact_samples,
    local_surface_samples,
    net_wrench,
    wrench_resistance,
)
from .design import make_covers
from .geometry import ObjectShape
from .kinematics import HandModel, kinematic_state
from .synthesis import GraspCandidate, SynthOptions, synthesize_precise_grasp

REASONS = ("no_contact", "penetration", "wrench_residual", "cone_violation", "disturbance_fail", "aperture")


@dataclass(frozen=True)
class OracleOptions:
    eps_contact: float = 1e-3
    eps_pen: float = 5e-4
    mu: float = 0.5
    mass: float = 0.05
    gravity: float = 9.81
    disturbance_ratio: float = 0.5
    m_edges: int = 8
    tol: float = 1e-4
    max_iter: int = 500
    min_power_fingers: int = 3


@dataclass
class Outcome:
    success: bool
    reasons: list
    metrics: dict = field(default_factory=dict)
    contacts: tuple | None = None  # (positions, inward normals) used for the wrench checks


def _world_samples(model: HandModel, candidate: GraspCandidate, covers: Covers | None):
    state = kinematic_state(model, candidate.q, candidate.wrist_transform)
    out = {}
    for f in model.finger_names:
        T = state.links[model.finger(f).tip_link]
        n = len(model.samples(f).points)
        pts, nrm, _ = local_contact_samples(model, f, n, covers)
        surf = local_surface_samples(model, f, covers)
        out[f] = (T.apply(pts), nrm @ T.rotation.T, T.apply(surf))
    return out


def external_wrenches(opts: OracleOptions, magnitude_ratio: float | None = None):
    weight = opts.mass * opts.gravity
    ratio = opts.disturbance_ratio if magnitude_ratio is None else magnitude_ratio
    g = np.array([0.0, 0.0, -weight, 0.0, 0.0, 0.0])
    lateral = []
    for axis, sign in ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)):
        w = g.copy()
        w[axis] += sign * ratio * weight
        lateral.append(w)
    return g, lateral


def evaluate_grasp(model: HandModel, candidate: GraspCandidate, shape: ObjectShape,
                   opts: OracleOptions = OracleOptions(), covers: Covers | None = None) -> Outcome:
    reasons = []
    if candidate.reason == "aperture":
        reasons.append("aperture")
    samples = _world_samples(model, candidate, covers)

    contact_pos, contact_nrm, gaps, contacting = [], [], [], []
    max_pen = 0.0
    for f, (x, c, surf) in samples.items():
        val, grad = shape.sdf(x)
        sval, _ = shape.sdf(surf)
        max_pen = max(max_pen, float(-min(val.min(), sval.min())))
        gaps.append(float(np.abs(val).min()))
        touch = np.abs(val) <= opts.eps_contact
        if touch.any():
            contacting.append(f)
            # friction cone sits at the nearest surface point, along the inward surface normal
            contact_pos.append(x[touch] - val[touch, None] * grad[touch])
            contact_nrm.append(-grad[touch])
    if candidate.mode == "precise":
        required_ok = model.thumb in contacting and model.index in contacting
    else:
        required_ok = len(contacting) >= opts.min_power_fingers
    if not required_ok:
        reasons.append("no_contact")
    if max_pen > opts.eps_pen:
        reasons.append("penetration")

    xs = np.vstack([samples[f][0] for f in (model.thumb, model.index)])
    cs = np.vstack([samples[f][1] for f in (model.thumb, model.index)])
    metrics = {"max_penetration": max_pen, "min_contact_gap": float(min(gaps)),
               "e_precise": float(np.linalg.norm(net_wrench(xs, cs)))}

    # with nothing in contact the solver just reports the unresisted wrench
    contacts = (np.vstack(contact_pos), np.vstack(contact_nrm)) if contact_pos else (np.zeros((0, 3)), np.zeros((0, 3)))
    g, lateral = external_wrenches(opts)
    kw = dict(mu=opts.mu, m_edges=opts.m_edges, tol=opts.tol, max_iter=opts.max_iter,
              reference=shape.center, torque_scale=shape.bounding_radius)
    grav = wrench_resistance(contacts, w_ext=g, **kw)
    metrics["gravity_residual"] = grav.residual
    dist = [wrench_resistance(contacts, w_ext=w, **kw) for w in lateral]
    metrics["disturbance_residual"] = max(d.residual for d in dist)
    if not grav.feasible:
        reasons.append("wrench_residual")
        if contact_pos and candidate.mode == "precise" and not _opposed_within_cones(samples, model, shape, opts):
            reasons.append("cone_violation")
    if contact_pos and not all(d.feasible for d in dist):
        reasons.append("disturbance_fail")
    if not contact_pos:
        contacts = None
    return Outcome(not reasons, reasons, metrics, contacts)


def _opposed_within_cones(samples, model, shape, opts) -> bool:
    """Two-finger check: the thumb-index contact line lies inside both friction cones."""
    ends = []
    for f in (model.thumb, model.index):
        x = samples[f][0]
        val, grad = shape.sdf(x)
        k = int(np.argmin(np.abs(val)))
        ends.append((x[k] - val[k] * grad[k], -grad[k]))
    (pa, na), (pb, nb) = ends
    line = pb - pa
    length = np.linalg.norm(line)
    if length == 0:
        return False
    line /= length
    cos_half = 1.0 / np.sqrt(1.0 + opts.mu ** 2)
    return bool(na @ line >= cos_half and nb @ (-line) >= cos_half)


# --------------------------------------------------------------------------
# labels


@dataclass
class LabeledExample:
    plane: list  # [px, py, pz, nx, ny, nz]
    q: list
    cloud_ref: str
    label: int
    seed: int = 0
    plane_id: int = 0

    def to_json(self) -> dict:
        return {"plane": [float(v) for v in self.plane], "q": [float(v) for v in self.q],
                "cloud_ref": self.cloud_ref, "label": int(self.label), "seed": int(self.seed),
                "plane_id": int(self.plane_id)}

    @classmethod
    def from_json(cls, d: dict) -> "LabeledExample":
        return cls(d["plane"], d["q"], d["cloud_ref"], int(d["label"]), d.get("seed", 0), d.get("plane_id", 0))


def task_seed(global_seed: int, *index) -> int:
    """Per-task RNG seed hashed from the global seed and the task position (ints or strings)."""
    h = hashlib.sha256(json.dumps([int(global_seed), *index]).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def label_task(model, plane, q_anchor, shape, seed, synth_opts, oracle_opts):
    covers = make_covers(model, plane, q_anchor)
    cand = synthesize_precise_grasp(model, shape, seed, synth_opts, covers)
    out = evaluate_grasp(model, cand, shape, oracle_opts, covers)
    return cand, out


def generate_labels(model: HandModel, planes: Sequence[tuple], objects: Sequence[ObjectShape],
                    seeds_per_pair: int, global_seed: int = 0,
                    synth_opts: SynthOptions = SynthOptions(), oracle_opts: OracleOptions = OracleOptions(),
                    jobs: int = 1) -> list[LabeledExample]:
    """One labelled example per (plane, object, seed); ``planes`` holds (Plane, q_anchor) pairs."""
    tasks = []
    for i, (plane, q_anchor) in enumerate(planes):
        for j, shape in enumerate(objects):
            for k in range(seeds_per_pair):
                tasks.append((i, j, k, task_seed(global_seed, i, j, k)))

    def run(task):
        i, j, k, seed = task
        plane, q_anchor = planes[i]
        _, out = label_task(model, plane, np.asarray(q_anchor), objects[j], seed, synth_opts, oracle_opts)
        return LabeledExample(plane.params().tolist(), list(map(float, q_anchor)), objects[j].id,
                              int(out.success), seed, i)

    from .parallel import ordered_map

    return ordered_map(run, tasks, jobs)
