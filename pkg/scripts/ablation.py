"""Design ablation: oracle success with no plane, a geometric plane, and a plane refined by the surrogate.

    python3 scripts/ablation.py --out runs/ablation --seeds 25

Writes labels, surrogate weights, both planes and a summary CSV to --out.
"""
import argparse
import json
import time
from pathlib import Path

from cograsp import fixture
from cograsp.kinematics import load_hand
from cograsp.pipeline import run_ablation
from cograsp.surrogate import write_jsonl


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--planes", type=int, default=16)
    ap.add_argument("--label-seeds", type=int, default=2)
    ap.add_argument("--seeds", type=int, default=25, help="eval seeds per held-out object")
    ap.add_argument("--w-phys", type=float, nargs="+", default=[0.01])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    model = load_hand(fixture("hand_planar2f.json"))
    abl = run_ablation(model, args.w_phys, args.seed, args.planes, args.label_seeds, args.seeds, args.epochs,
                       args.jobs, log=lambda msg: print(f"[{time.time() - t0:7.1f}s] {msg}", flush=True))
    write_jsonl(out / "dataset.jsonl", [e.to_json() for e in abl.examples])
    abl.net.save(out / "weights.json")
    for w, res in abl.designs.items():
        (out / f"plane_w{w:g}.json").write_text(json.dumps({**res.plane.to_json(), "q_anchor": res.q_anchor.tolist()}))
    with open(out / "summary.csv", "w") as fh:
        fh.write("condition,w_phys,success_rate,trials\n")
        for r in abl.rows:
            fh.write(f"{r[0]},{r[1]!r},{r[2]!r},{r[3]}\n")
    for r in abl.rows:
        print(f"{r[0]:14s} w_phys={r[1]:<6g} {r[2]:.3f} ({r[3]} trials)")


if __name__ == "__main__":
    main()
