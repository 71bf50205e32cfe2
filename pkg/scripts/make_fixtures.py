"""Regenerate the bundled hand descriptions in src/cograsp/fixtures/.

Fingertips are modelled as a spherical pad of radius PAD_R whose apex is the
tip-link origin. Contact samples: the apex plus three points at 53.13 deg
polar angle, 120 deg apart. Body surface samples: a Fibonacci sphere.
"""
import json
from pathlib import Path

import numpy as np

PAD_R = 0.004
OUT = Path(__file__).resolve().parents[1] / "src" / "cograsp" / "fixtures"


def pad_samples(up):
    """Contact samples for a pad whose outward normal is +up (a signed axis vector)."""
    up = np.asarray(up, float)
    # two tangent directions
    t1 = np.array([1.0, 0, 0]) if abs(up[0]) < 0.5 else np.array([0, 0, 1.0])
    t2 = np.cross(up, t1)
    center = -PAD_R * up
    out = [{"point": [0.0, 0.0, 0.0], "normal": up.tolist()}]
    for phi in np.deg2rad([90.0, 210.0, 330.0]):
        nrm = 0.6 * up + 0.8 * (np.cos(phi) * t1 + np.sin(phi) * t2)
        nrm = nrm / np.linalg.norm(nrm)
        pt = center + PAD_R * nrm
        out.append({"point": np.round(pt, 15).tolist(), "normal": nrm.tolist()})
    return out


def body_samples(up, count=40):
    up = np.asarray(up, float)
    center = -PAD_R * up
    k = np.arange(count) + 0.5
    z = 1 - 2 * k / count
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5**0.5) * k
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = center + PAD_R * dirs
    return np.round(pts, 15).tolist()


def revolute(name, parent, child, xyz, axis, limits):
    return {"name": name, "parent": parent, "child": child, "type": "revolute",
            "origin": {"xyz": xyz}, "axis": axis, "limits": limits}


def fixed(name, parent, child, xyz):
    return {"name": name, "parent": parent, "child": child, "type": "fixed", "origin": {"xyz": xyz}}


def planar_finger(prefix, base, axis_sign, l1, l2, lim1, lim2):
    ax = [0.0, 0.0, float(axis_sign)]
    return [
        revolute(f"{prefix}_j1", "palm", f"{prefix}_l1", base, ax, lim1),
        revolute(f"{prefix}_j2", f"{prefix}_l1", f"{prefix}_l2", [l1, 0.0, 0.0], ax, lim2),
        fixed(f"{prefix}_tip_joint", f"{prefix}_l2", f"{prefix}_tip", [l2, 0.0, 0.0]),
    ]


def hand(fingers):
    joints, flist, samples, surface = [], [], {}, {}
    for name, js, up in fingers:
        joints += js
        flist.append({"name": name, "joint_names": [j["name"] for j in js if j["type"] != "fixed"],
                      "tip_link": f"{name}_tip"})
        samples[f"{name}_tip"] = pad_samples(up)
        surface[f"{name}_tip"] = body_samples(up)
    return {"joints": joints, "fingers": flist, "fingertip_samples": samples, "surface_samples": surface}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    lim1, lim2 = [-0.2, 1.5], [-0.8, 1.5]
    planar = hand([
        ("thumb", planar_finger("thumb", [0.0, 0.0, 0.0], 1, 0.05, 0.04, lim1, lim2), [0, 1, 0]),
        ("index", planar_finger("index", [0.0, 0.035, 0.0], -1, 0.05, 0.04, lim1, lim2), [0, -1, 0]),
    ])
    prismatic = hand([
        ("thumb", [{"name": "thumb_slide", "parent": "palm", "child": "thumb_tip", "type": "prismatic",
                    "origin": {"xyz": [-0.02, 0.0, 0.0]}, "axis": [1.0, 0.0, 0.0], "limits": [-0.03, 0.03]}],
         [1, 0, 0]),
        ("index", [{"name": "index_slide", "parent": "palm", "child": "index_tip", "type": "prismatic",
                    "origin": {"xyz": [0.02, 0.0, 0.0]}, "axis": [1.0, 0.0, 0.0], "limits": [-0.03, 0.03]}],
         [-1, 0, 0]),
    ])
    four = hand([
        ("thumb", planar_finger("thumb", [0.0, 0.0, 0.0], 1, 0.06, 0.05, [-0.3, 1.5], [-0.8, 1.5]), [0, 1, 0]),
        ("index", planar_finger("index", [0.0, 0.09, -0.022], -1, 0.06, 0.05, [-0.3, 1.5], [-0.8, 1.5]), [0, -1, 0]),
        ("middle", planar_finger("middle", [0.0, 0.09, 0.0], -1, 0.06, 0.05, [-0.3, 1.5], [-0.8, 1.5]), [0, -1, 0]),
        ("ring", planar_finger("ring", [0.0, 0.09, 0.022], -1, 0.06, 0.05, [-0.3, 1.5], [-0.8, 1.5]), [0, -1, 0]),
    ])
    for fname, data in [("hand_planar2f.json", planar), ("hand_prismatic2f.json", prismatic),
                        ("hand_4f.json", four)]:
        (OUT / fname).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")
        print("wrote", OUT / fname)


if __name__ == "__main__":
    main()
