"""Command line: ``python -m cograsp <command> [flags]``.

Exit codes: 0 done, 2 bad configuration or missing upstream artifact, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import fixture
from .config import ConfigError, RunConfig, load_config
from .design import DEFAULT_W_PHYS, generate_covers, optimize_plane, read_obj, write_obj, write_stl
from .geometry import GeometryError, Plane
from .kinematics import HandModelError, load_hand
from .oracle import LabeledExample
from .pipeline import (
    DEFAULT_EVAL_OBJECTS,
    DEFAULT_OBJECTS,
    DEFAULT_SWITCH_OBJECTS,
    covers_from_plane,
    label_planes,
    load_objects,
    pinchable,
    run_labels,
    run_synthesis,
    run_trials,
    success_rate,
    trajectory_for,
)
from .surrogate import (
    SurrogateNet,
    SwitcherNet,
    accuracy,
    classify_grasp_type,
    load_net,
    read_jsonl,
    surrogate_dataset,
    switcher_dataset,
    train,
    write_jsonl,
)
from .synthesis import GraspCandidate


class UsageError(Exception):
    """Configuration problem or missing upstream artifact (exit 2)."""


# --------------------------------------------------------------------------
# artifact helpers


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows, meta: dict) -> None:
    buf = io.StringIO()
    buf.write("# meta " + json.dumps(meta, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def write_json(path: Path, data: dict, meta: dict) -> None:
    d = dict(data)
    d["meta"] = meta
    path.write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")


def _require(path, stage: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"missing upstream artifact from stage '{stage}': {p}")
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _hand(cfg: RunConfig):
    path = Path(cfg.hand) if cfg.hand else fixture("hand_planar2f.json")
    if not path.is_file():
        raise UsageError(f"hand file not found: {path}")
    return load_hand(path)


def _objects(specs, cfg: RunConfig, default):
    return load_objects(specs or default, cfg.n_points)


def _plane_file(path, stage="design"):
    d = json.loads(_require(path, stage).read_text())
    return Plane.from_json(d), np.array(d["q_anchor"], dtype=float)


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    objects = _objects(cfg.objects, cfg, DEFAULT_OBJECTS[:1])
    out = _out_dir(cfg)
    opts = cfg.synth_options()
    cands = run_synthesis(model, objects, cfg.seeds, cfg.global_seed, cfg.mode, opts, jobs=cfg.jobs)
    shapes = {o.id: o for o in objects}
    records = []
    for c in cands:
        rec = c.to_record()
        traj = trajectory_for(model, c, shapes[c.object_id], cfg.alpha_pre, cfg.alpha_over)
        rec["waypoints"] = traj.to_records()
        records.append(rec)
    write_jsonl(out / "grasps.jsonl", records, cfg.meta())
    print(f"{'object':40s} {'mode':8s} success")
    for o in objects:
        k = sum(c.converged for c in cands if c.object_id == o.id)
        print(f"{o.id:40s} {cfg.mode:8s} {k}/{cfg.seeds}")
    return 0


def cmd_design(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    out = _out_dir(cfg)
    surrogate = None
    objects = []
    if args.with_surrogate:
        surrogate = load_net(_require(args.with_surrogate, "train"))
        if not isinstance(surrogate, SurrogateNet) or surrogate.d != model.dof:
            raise UsageError(f"{args.with_surrogate}: not a surrogate for a {model.dof}-joint hand")
        objects = _objects(cfg.objects, cfg, DEFAULT_OBJECTS)
        if cfg.w_phys == 0 and "phys" not in cfg.design.get("weights", {}):
            cfg = _with(cfg, w_phys=DEFAULT_W_PHYS)
    res = optimize_plane(model, objects, surrogate, cfg.design_options())
    meta = cfg.meta()
    write_json(out / "plane.json", {**res.plane.to_json(), "q_anchor": res.q_anchor.tolist(),
                                    "anchor": res.anchor, "q_batch": res.q_batch.tolist()}, meta)
    cols = ["iter", "E_att", "E_rep", "E_mani", "E_phys", "total"]
    write_csv(out / "history.csv", cols, [[h[c] for c in cols] for h in res.history], meta)
    _write_covers(model, res.plane, res.q_anchor, cfg.inflation, out, meta)
    h = res.history[-1]
    print(f"plane p={np.round(res.plane.p, 5).tolist()} n={np.round(res.plane.n, 4).tolist()}")
    print(f"final E_att={h['E_att']:.4g} E_rep={h['E_rep']:.4g} E_mani={h['E_mani']:.4g} "
          f"E_phys={h['E_phys']:.4g} total={h['total']:.4g}")
    return 0


def _write_covers(model, plane, q_anchor, inflation, out: Path, meta: dict) -> None:
    covers = generate_covers(model, plane, q_anchor, inflation)
    folder = out / "covers"
    folder.mkdir(exist_ok=True)
    tag = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    for f, cov in covers.items():
        write_stl(folder / f"{f}.stl", cov.mesh, name=f"{f}_cover {tag}")
        write_obj(folder / f"{f}.obj", cov.mesh)
        text = (folder / f"{f}.obj").read_text()
        (folder / f"{f}.obj").write_text(f"# meta {json.dumps(meta, sort_keys=True)}\n" + text)


def cmd_cover(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    plane, q_anchor = _plane_file(args.plane or Path(cfg.out) / "plane.json")
    out = _out_dir(cfg)
    _write_covers(model, plane, q_anchor, cfg.inflation, out, cfg.meta())
    for f in (model.thumb, model.index):
        m = read_obj(out / "covers" / f"{f}.obj")
        print(f"{f}: {len(m.vertices)} vertices, {len(m.faces)} faces, watertight={m.is_watertight()}")
    return 0


def cmd_label(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    objects = _objects(cfg.objects, cfg, DEFAULT_OBJECTS)
    out = _out_dir(cfg)
    lo = cfg.label_options()
    designs = label_planes(model, lo.planes, cfg.global_seed, lo.plane_iterations, lo.plane_batch,
                           lo.init_jitter, cfg.jobs)
    pairs = run_labels(model, designs, objects, lo.seeds_per_pair, cfg.global_seed, cfg.synth_options(),
                       cfg.oracle_options(), cfg.jobs)
    meta = cfg.meta()
    write_jsonl(out / "dataset.jsonl", [ex.to_json() for ex, _ in pairs], meta)
    write_jsonl(out / "planes.jsonl", [{**d.plane.to_json(), "q_anchor": d.q_anchor.tolist(), "id": i}
                                       for i, d in enumerate(designs)], meta)
    write_json(out / "objects.json", {"objects": cfg.objects or DEFAULT_OBJECTS, "n_points": cfg.n_points,
                                      "ids": [o.id for o in objects]}, meta)
    rows = [[ex.plane_id, ex.cloud_ref, ex.seed, ex.label, " ".join(t.outcome.reasons),
             t.outcome.metrics["max_penetration"], t.outcome.metrics["e_precise"],
             t.outcome.metrics["min_contact_gap"], t.outcome.metrics["disturbance_residual"]]
            for ex, t in pairs]
    write_csv(out / "labels.csv", ["plane_id", "object_id", "seed", "success", "reasons", "max_penetration",
                                   "e_precise", "min_contact_gap", "disturbance_residual"], rows, meta)
    pos = sum(ex.label for ex, _ in pairs)
    print(f"{len(pairs)} labelled examples, {pos} positive, {len(designs)} planes x {len(objects)} objects")
    return 0


def _load_dataset(path):
    p = _require(path, "label")
    _, rows = read_jsonl(p)
    examples = [LabeledExample.from_json(r) for r in rows]
    if not examples:
        raise UsageError(f"dataset {p} is empty")
    objs_path = _require(p.parent / "objects.json", "label")
    spec = json.loads(objs_path.read_text())
    shapes = {o.id: o for o in load_objects(spec["objects"], spec["n_points"])}
    return examples, shapes


def cmd_train(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    examples, shapes = _load_dataset(args.data or Path(cfg.out) / "dataset.jsonl")
    labels = {e.label for e in examples}
    if len(labels) < 2:
        raise UsageError("dataset has a single class; cannot train")
    out = _out_dir(cfg)
    topts = cfg.train_options()
    net = SurrogateNet(model.dof, seed=topts.seed)
    data = surrogate_dataset(net, examples, shapes)
    net, curve = train(net, data, topts)
    meta = cfg.meta()
    net.save(out / "weights.json", meta)
    write_csv(out / "loss.csv", ["epoch", "bce"], [[i, v] for i, v in enumerate(curve)], meta)
    print(f"trained on {len(data)} examples: final loss {curve[-1]:.4f}, accuracy {accuracy(net, data):.3f}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    objects = _objects(cfg.eval_objects, cfg, DEFAULT_EVAL_OBJECTS)
    conditions = [("no plane", None)]
    for item in args.plane or [str(Path(cfg.out) / "plane.json")]:
        name, _, path = item.rpartition("=")
        conditions.append((name or "design", _plane_file(path)))
    out = _out_dir(cfg)
    rows, table = [], []
    for name, planed in conditions:
        covers = covers_from_plane(model, *planed) if planed else None
        trials = run_trials(model, objects, cfg.seeds, cfg.global_seed, covers, cfg.synth_options(),
                            cfg.oracle_options(), cfg.jobs)
        table.append((name, success_rate(trials), len(trials)))
        for t in trials:
            m = t.outcome.metrics
            rows.append([name, t.object_id, t.seed, int(t.outcome.success), " ".join(t.outcome.reasons),
                         m["max_penetration"], m["e_precise"], m["min_contact_gap"], m["disturbance_residual"]])
    meta = cfg.meta()
    write_csv(out / "eval.csv", ["condition", "object_id", "seed", "success", "reasons", "max_penetration",
                                 "e_precise", "min_contact_gap", "disturbance_residual"], rows, meta)
    write_csv(out / "eval_summary.csv", ["condition", "success_rate", "trials"], table, meta)
    print(f"{'condition':24s} {'success rate':>12s} {'trials':>7s}")
    for name, rate, n in table:
        print(f"{name:24s} {rate:12.3f} {n:7d}")
    return 0


def cmd_switch(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    specs = cfg.objects or DEFAULT_SWITCH_OBJECTS
    objects = load_objects(specs, cfg.n_points)
    out = _out_dir(cfg)
    seeds = max(cfg.seeds, 1)
    labels = [int(pinchable(model, o, seeds, cfg.global_seed, cfg.synth_options(), cfg.oracle_options()))
              for o in objects]
    if len(set(labels)) < 2:
        raise UsageError("grasp-type labels are all one class; widen the object set")
    topts = cfg.train_options()
    net, curve = train(SwitcherNet(seed=topts.seed), switcher_dataset(objects, labels), topts)
    rows, correct = [], 0
    for spec, o, y in zip(specs, objects, labels):
        kind, conf = classify_grasp_type(net, o.cloud)
        correct += int((kind == "precise") == bool(y))
        rows.append([spec, o.id, "precise" if y else "power", kind, conf])
    meta = cfg.meta()
    net.save(out / "switcher.json", meta)
    write_csv(out / "switch.csv", ["spec", "object_id", "rule_label", "predicted", "confidence"], rows, meta)
    print(f"{'object':36s} {'rule':8s} predicted")
    for r in rows:
        print(f"{r[0]:36s} {r[2]:8s} {r[3]} ({r[4]:.2f})")
    print(f"switcher accuracy {correct / len(objects):.3f}")
    return 0


def cmd_motion(cfg: RunConfig, args) -> int:
    model = _hand(cfg)
    meta_in, rows = read_jsonl(_require(args.grasps or Path(cfg.out) / "grasps.jsonl", "synth"))
    if not rows:
        raise UsageError("no grasp candidates in input")
    if not 0 <= args.index < len(rows):
        raise UsageError(f"candidate index {args.index} out of range (0..{len(rows) - 1})")
    cand = GraspCandidate.from_record(rows[args.index])
    shape = None
    if cand.mode == "power":
        spec = cfg.objects[0] if cfg.objects else None
        if spec is None:
            raise UsageError("power trajectories need --object for the SDF push")
        shape = load_objects([spec], cfg.n_points)[0]
    traj = trajectory_for(model, cand, shape, cfg.alpha_pre, cfg.alpha_over)
    names = ["pre_grasp", "grasp", "overshoot"]
    recs = [{"waypoint": n, **r} for n, r in zip(names, traj.to_records())]
    out = _out_dir(cfg)
    write_jsonl(out / "trajectory.jsonl", recs, cfg.meta())
    for r in recs:
        print(r["waypoint"], np.round(r["q"], 4).tolist())
    return 0


COMMANDS = {"synth": cmd_synth, "design": cmd_design, "label": cmd_label, "train": cmd_train,
            "eval": cmd_eval, "switch": cmd_switch, "cover": cmd_cover, "motion": cmd_motion}


def _with(cfg: RunConfig, **kw) -> RunConfig:
    from .config import replace

    return replace(cfg, **kw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, dest="global_seed", help="global seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--hand", help="hand description JSON (default: bundled planar fixture)")
    common.add_argument("--object", action="append", dest="objects",
                        help="primitive spec (sphere:r=0.005) or PLY path; repeatable")
    common.add_argument("--seeds", type=int, help="seeds per object")

    p = argparse.ArgumentParser(prog="cograsp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="optimise grasps")
    s.add_argument("--mode", choices=["precise", "power"])
    s = sub.add_parser("design", parents=[common], help="optimise the contact plane and export covers")
    s.add_argument("--with-surrogate", help="surrogate weights enabling the physics term")
    s.add_argument("--w-phys", type=float, dest="w_phys")
    s = sub.add_parser("label", parents=[common], help="oracle labels for designed planes")
    s = sub.add_parser("train", parents=[common], help="fit the success surrogate")
    s.add_argument("--data", help="dataset.jsonl from the label stage")
    s = sub.add_parser("eval", parents=[common], help="oracle success with and without a designed plane")
    s.add_argument("--plane", action="append", help="plane.json, optionally NAME=PATH; repeatable")
    s.add_argument("--eval-object", action="append", dest="eval_objects")
    sub.add_parser("switch", parents=[common], help="train and score the power/precise switcher")
    s = sub.add_parser("cover", parents=[common], help="export cover meshes for a plane")
    s.add_argument("--plane")
    s = sub.add_parser("motion", parents=[common], help="pre-grasp / grasp / overshoot for one candidate")
    s.add_argument("--grasps")
    s.add_argument("--index", type=int, default=0)
    return p


CONFIG_FLAGS = ("global_seed", "out", "jobs", "hand", "objects", "seeds", "mode", "w_phys", "eval_objects")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, HandModelError, GeometryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
