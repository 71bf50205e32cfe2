"""Batch stages shared by the command line and the experiment scripts."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .design import DesignOptions, DesignResult, DesignWeights, make_covers, optimize_plane
from .geometry import ObjectShape, Plane, cloud_shape, make_primitive, parse_primitive_spec, read_ply
from .kinematics import HandModel
from .oracle import LabeledExample, OracleOptions, Outcome, evaluate_grasp, task_seed
from .parallel import ordered_map
from .surrogate import SurrogateNet, TrainOptions, accuracy, surrogate_dataset, train
from .synthesis import (
    GraspCandidate,
    GraspTrajectory,
    SynthOptions,
    parallel_pinch_motion,
    sdf_push_motion,
    synthesize_power_grasp,
    synthesize_precise_grasp,
)

# small primitives used for labelling and design
DEFAULT_OBJECTS = [
    "sphere:r=0.005", "sphere:r=0.009", "box:hx=0.008,hy=0.006,hz=0.01", "box:hx=0.012,hy=0.005,hz=0.008",
    "cyl:r=0.006,hh=0.012", "cyl:r=0.009,hh=0.006", "sphere:r=0.013", "box:hx=0.006,hy=0.006,hz=0.006",
]
# held out: no size appears in the list above
DEFAULT_EVAL_OBJECTS = [
    "sphere:r=0.004", "sphere:r=0.007", "sphere:r=0.011", "box:hx=0.007,hy=0.009,hz=0.005",
    "box:hx=0.01,hy=0.007,hz=0.012", "cyl:r=0.005,hh=0.01", "cyl:r=0.008,hh=0.008", "cyl:r=0.011,hh=0.005",
]
# small ones can be pinched by the planar fixture, large ones exceed its aperture
DEFAULT_SWITCH_OBJECTS = [
    "sphere:r=0.004", "sphere:r=0.006", "sphere:r=0.008", "sphere:r=0.01",
    "box:hx=0.006,hy=0.006,hz=0.006", "box:hx=0.01,hy=0.008,hz=0.006", "cyl:r=0.005,hh=0.01", "cyl:r=0.008,hh=0.006",
    "box:hx=0.03,hy=0.03,hz=0.03", "box:hx=0.04,hy=0.04,hz=0.04", "box:hx=0.05,hy=0.035,hz=0.03",
    "sphere:r=0.035", "sphere:r=0.05", "cyl:r=0.04,hh=0.05", "cyl:r=0.035,hh=0.03", "box:hx=0.06,hy=0.04,hz=0.03",
]


def load_object(spec: str, n_points: int = 256) -> ObjectShape:
    """A primitive spec string or a path to an ASCII PLY cloud."""
    if spec.endswith(".ply"):
        pts, nrm = read_ply(spec)
        return cloud_shape(pts, nrm, id=Path(spec).name)
    kind, params = parse_primitive_spec(spec)
    return make_primitive(kind, params, count=n_points, seed=0)


def load_objects(specs: Sequence[str], n_points: int = 256) -> list[ObjectShape]:
    return [load_object(s, n_points) for s in specs]


# --------------------------------------------------------------------------
# grasps


def synth_tasks(objects: Sequence[ObjectShape], seeds: int, global_seed: int, salt: str = "synth"):
    return [(j, task_seed(global_seed, salt, j, k)) for j in range(len(objects)) for k in range(seeds)]


def run_synthesis(model: HandModel, objects, seeds: int, global_seed: int, mode: str = "precise",
                  opts: SynthOptions = SynthOptions(), covers=None, jobs: int = 1,
                  salt: str = "synth") -> list[GraspCandidate]:
    fn = synthesize_precise_grasp if mode == "precise" else synthesize_power_grasp

    def run(task):
        j, seed = task
        return fn(model, objects[j], seed, opts, covers)

    return ordered_map(run, synth_tasks(objects, seeds, global_seed, salt), jobs)


def trajectory_for(model: HandModel, cand: GraspCandidate, shape: ObjectShape | None,
                   alpha_pre: float = 0.02, alpha_over: float = 0.005, covers=None) -> GraspTrajectory:
    """Pre-grasp / grasp / overshoot waypoints around a candidate."""
    if cand.mode == "precise":
        traj = parallel_pinch_motion(model, cand.q, alpha_pre, overshoot_alpha=alpha_over,
                                     wrist=cand.wrist_transform, covers=covers)
        return GraspTrajectory([(cand.wrist, q) for _, q in traj.waypoints], alpha_pre, traj.dq)
    pre = sdf_push_motion(model, cand.q, shape, -alpha_pre, cand.wrist_transform)
    over = sdf_push_motion(model, cand.q, shape, alpha_over, cand.wrist_transform)
    return GraspTrajectory([(cand.wrist, pre), (cand.wrist, cand.q), (cand.wrist, over)], alpha_pre)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Trial:
    object_id: str
    seed: int
    candidate: GraspCandidate
    outcome: Outcome


def run_trials(model: HandModel, objects, seeds: int, global_seed: int, covers=None,
               synth_opts: SynthOptions = SynthOptions(), oracle_opts: OracleOptions = OracleOptions(),
               jobs: int = 1, salt: str = "eval") -> list[Trial]:
    def run(task):
        j, seed = task
        cand = synthesize_precise_grasp(model, objects[j], seed, synth_opts, covers)
        return Trial(objects[j].id, seed, cand, evaluate_grasp(model, cand, objects[j], oracle_opts, covers))

    return ordered_map(run, synth_tasks(objects, seeds, global_seed, salt), jobs)


def success_rate(trials: Sequence[Trial]) -> float:
    return float(np.mean([t.outcome.success for t in trials])) if trials else float("nan")


def covers_from_plane(model: HandModel, plane: Plane | None, q_anchor=None):
    if plane is None:
        return None
    return make_covers(model, plane, q_anchor)


# --------------------------------------------------------------------------
# labelling


def label_planes(model: HandModel, count: int, global_seed: int, iterations: int, batch: int,
                 jitter: float, jobs: int = 1) -> list[DesignResult]:
    """Short geometric designs from different random starts."""

    def run(i):
        opts = DesignOptions(iterations=iterations, batch=batch, init_jitter=jitter,
                             seed=task_seed(global_seed, "plane", i))
        return optimize_plane(model, opts=opts)

    return ordered_map(run, list(range(count)), jobs)


def run_labels(model: HandModel, designs: Sequence[DesignResult], objects, seeds_per_pair: int, global_seed: int,
               synth_opts: SynthOptions = SynthOptions(), oracle_opts: OracleOptions = OracleOptions(),
               jobs: int = 1):
    """One (example, trial) pair per (plane, object, seed), in that nesting order."""
    tasks = [(i, j, task_seed(global_seed, "label", i, j, k))
             for i in range(len(designs)) for j in range(len(objects)) for k in range(seeds_per_pair)]

    def run(task):
        i, j, seed = task
        d = designs[i]
        covers = make_covers(model, d.plane, d.q_anchor)
        cand = synthesize_precise_grasp(model, objects[j], seed, synth_opts, covers)
        out = evaluate_grasp(model, cand, objects[j], oracle_opts, covers)
        ex = LabeledExample(d.plane.params().tolist(), d.q_anchor.tolist(), objects[j].id, int(out.success), seed, i)
        return ex, Trial(objects[j].id, seed, cand, out)

    return ordered_map(run, tasks, jobs)


def pinchable(model: HandModel, shape: ObjectShape, seeds: int, global_seed: int,
              synth_opts: SynthOptions = SynthOptions(), oracle_opts: OracleOptions = OracleOptions()) -> bool:
    """Grasp-type rule: some seed yields a converged thumb-index grasp in contact without penetration."""
    blocking = {"no_contact", "penetration", "aperture"}
    for k in range(seeds):
        cand = synthesize_precise_grasp(model, shape, task_seed(global_seed, "switch", shape.id, k), synth_opts)
        if not cand.converged:
            continue
        out = evaluate_grasp(model, cand, shape, oracle_opts)
        if not blocking & set(out.reasons):
            return True
    return False


# --------------------------------------------------------------------------
# ablation


@dataclass
class Ablation:
    examples: list
    net: SurrogateNet
    train_accuracy: float
    rows: list  # (condition, w_phys, success rate, trials)
    designs: dict  # w_phys -> DesignResult


def run_ablation(model: HandModel, w_phys: Sequence[float], global_seed: int = 0, planes: int = 16,
                 label_seeds: int = 2, eval_seeds: int = 25, epochs: int = 200, jobs: int = 1,
                 train_specs=DEFAULT_OBJECTS, eval_specs=DEFAULT_EVAL_OBJECTS, log=lambda msg: None) -> Ablation:
    """Success rate with no plane, a geometric plane, and surrogate-refined planes, on held-out objects."""
    train_objs = load_objects(train_specs)
    eval_objs = load_objects(eval_specs)
    designs = label_planes(model, planes, global_seed, 60, 8, 0.6, jobs)
    examples = [ex for ex, _ in run_labels(model, designs, train_objs, label_seeds, global_seed, jobs=jobs)]
    log(f"labels: {sum(e.label for e in examples)}/{len(examples)} positive")

    net = SurrogateNet(model.dof, seed=global_seed)
    data = surrogate_dataset(net, examples, {o.id: o for o in train_objs})
    net, _ = train(net, data, TrainOptions(epochs=epochs, seed=global_seed))
    acc = accuracy(net, data)
    log(f"surrogate train accuracy {acc:.3f}")

    trials = run_trials(model, eval_objs, eval_seeds, global_seed, None, jobs=jobs)
    rows = [("no plane", 0.0, success_rate(trials), len(trials))]
    log(f"no plane: {rows[-1][2]:.3f}")
    results = {}
    for w in [0.0, *w_phys]:
        opts = DesignOptions(seed=global_seed, weights=DesignWeights(phys=w))
        res = optimize_plane(model, train_objs, net if w > 0 else None, opts)
        results[w] = res
        trials = run_trials(model, eval_objs, eval_seeds, global_seed, make_covers(model, res.plane, res.q_anchor),
                            jobs=jobs)
        rows.append(("design" if w == 0 else "design+phys", w, success_rate(trials), len(trials)))
        log(f"{rows[-1][0]} w_phys={w:g}: {rows[-1][2]:.3f}")
    return Ablation(examples, net, acc, rows, results)
