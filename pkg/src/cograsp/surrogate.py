"""Point-cloud success predictor and grasp-type switcher with a hand-written backward pass.

Both nets share one layout: a per-point MLP (3 -> 64 -> 128, ReLU) max-pooled over
points, concatenated with extra inputs and fed to an MLP head ending in a sigmoid.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import ObjectShape, Plane

P_SCALE = 0.05  # metres; plane offsets and object sizes are divided by this on input


@dataclass(frozen=True)
class Observation:
    """Centred cloud scaled to the unit ball plus its size input."""

    points: np.ndarray
    scale: float
    ref: str = ""


def observe(shape_or_cloud, ref: str | None = None) -> Observation:
    if isinstance(shape_or_cloud, ObjectShape):
        cloud, ref = shape_or_cloud.cloud, shape_or_cloud.id if ref is None else ref
    else:
        cloud = np.asarray(shape_or_cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise ValueError(f"cloud must be a nonempty N x 3 array, got shape {cloud.shape}")
    c = cloud - cloud.mean(axis=0)
    r = float(np.linalg.norm(c, axis=1).max())
    if r == 0.0:
        r = 1.0
    return Observation(c / r, r / P_SCALE, ref or "")


def _sigmoid(z):
    return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))


def _glorot(rng, fan_in, fan_out):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, (fan_in, fan_out))


class PointNetClassifier:
    """Max-pooled point encoder + MLP head with ``extra`` side inputs and a sigmoid output."""

    kind = "classifier"

    def __init__(self, extra: int, encoder=(64, 128), head=(256, 128), seed: int | None = 0, d: int = 0):
        self.extra, self.d = int(extra), int(d)
        self.encoder, self.head = tuple(encoder), tuple(head)
        dims_e = (3,) + self.encoder
        dims_h = (self.encoder[-1] + self.extra,) + self.head + (1,)
        self.shapes = []
        for a, b in zip(dims_e[:-1], dims_e[1:]):
            self.shapes += [(a, b), (b,)]
        for a, b in zip(dims_h[:-1], dims_h[1:]):
            self.shapes += [(a, b), (b,)]
        self.n_enc = 2 * len(self.encoder)
        rng = np.random.default_rng(seed) if seed is not None else None
        self.params = [
            (_glorot(rng, *s) if len(s) == 2 else np.zeros(s)) if rng is not None else np.zeros(s)
            for s in self.shapes
        ]

    # ---- parameters

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v) -> None:
        v = np.asarray(v, dtype=float)
        if v.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {v.size}")
        out, k = [], 0
        for s in self.shapes:
            m = int(np.prod(s))
            out.append(v[k:k + m].reshape(s).copy())
            k += m
        self.params = out

    def copy(self):
        other = self.__class__.__new__(self.__class__)
        other.__dict__.update(self.__dict__)
        other.params = [p.copy() for p in self.params]
        return other

    # ---- encoder

    def encode(self, points: np.ndarray):
        a = np.asarray(points, dtype=float)
        cache = [a]
        for i in range(0, self.n_enc, 2):
            z = a @ self.params[i] + self.params[i + 1]
            a = np.maximum(z, 0.0)
            cache.append(z)
        arg = np.argmax(a, axis=0)  # first maximum, i.e. lowest point index on ties
        return a[arg, np.arange(a.shape[1])], (cache, arg)

    def encode_backward(self, cache, d_pooled, grads=None, want_input=False):
        acts, arg = cache
        zs = acts[1:]
        n = len(acts[0])
        # only the argmax rows carry gradient
        rows = np.unique(arg)
        local = {r: i for i, r in enumerate(rows)}
        dz = np.zeros((len(rows), zs[-1].shape[1]))
        dz[[local[r] for r in arg], np.arange(len(arg))] = d_pooled
        dx_rows = None
        for layer in range(len(zs) - 1, -1, -1):
            dz = dz * (zs[layer][rows] > 0)
            inp = acts[0][rows] if layer == 0 else np.maximum(zs[layer - 1][rows], 0.0)
            if grads is not None:
                grads[2 * layer] += inp.T @ dz
                grads[2 * layer + 1] += dz.sum(axis=0)
            if layer > 0 or want_input:
                dz = dz @ self.params[2 * layer].T
        if want_input:
            dx_rows = np.zeros((n, 3))
            dx_rows[rows] = dz
        return dx_rows

    # ---- head

    def head_forward(self, h):
        cache = [h]
        a = h
        n_head = len(self.head) + 1
        for j in range(n_head):
            i = self.n_enc + 2 * j
            z = a @ self.params[i] + self.params[i + 1]
            a = np.maximum(z, 0.0) if j < n_head - 1 else z
            cache.append(z)
        return _sigmoid(a[:, 0]), cache

    def head_backward(self, cache, d_logit, grads=None):
        """Backprop ``d_logit`` (B,) through the head; returns d input (B, D)."""
        n_head = len(self.head) + 1
        dz = d_logit[:, None]
        for j in range(n_head - 1, -1, -1):
            i = self.n_enc + 2 * j
            inp = cache[0] if j == 0 else np.maximum(cache[j], 0.0)
            if grads is not None:
                grads[i] += inp.T @ dz
                grads[i + 1] += dz.sum(axis=0)
            dz = dz @ self.params[i].T
            if j > 0:
                dz = dz * (cache[j] > 0)
        return dz

    # ---- batched prediction over a few distinct clouds

    def predict(self, obs_list: Sequence[Observation], extras: np.ndarray, which: Sequence[int]) -> np.ndarray:
        pooled = [self.encode(o.points)[0] for o in obs_list]
        h = np.hstack([np.array([pooled[w] for w in which]), extras])
        return self.head_forward(h)[0]

    def loss_and_grad(self, obs_list, extras, which, labels, grad=True):
        """Mean binary cross-entropy and its gradient w.r.t. every parameter."""
        enc = [self.encode(o.points) for o in obs_list]
        which = np.asarray(which)
        h = np.hstack([np.array([enc[w][0] for w in which]), extras])
        s, cache = self.head_forward(h)
        y = np.asarray(labels, dtype=float)
        z = cache[-1][:, 0]
        loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
        if not grad:
            return loss, None
        grads = [np.zeros(sh) for sh in self.shapes]
        dh = self.head_backward(cache, (s - y) / len(y), grads)
        width = self.encoder[-1]
        for u in range(len(obs_list)):
            sel = which == u
            if sel.any():
                self.encode_backward(enc[u][1], dh[sel, :width].sum(axis=0), grads)
        return loss, grads

    # ---- serialisation

    def arch(self) -> dict:
        return {"kind": self.kind, "d": self.d, "extra": self.extra,
                "encoder": list(self.encoder), "head": list(self.head)}

    def to_json(self) -> dict:
        return {"shapes": [list(s) for s in self.shapes], "data": self.flat().tolist(), "arch": self.arch()}

    def save(self, path, meta: dict | None = None) -> None:
        d = self.to_json()
        if meta:
            d["meta"] = meta
        Path(path).write_text(json.dumps(d))


class SurrogateNet(PointNetClassifier):
    """Success probability of a (plane, configuration, object) triple."""

    kind = "surrogate"

    def __init__(self, d: int, encoder=(64, 128), head=(256, 128), seed: int | None = 0):
        super().__init__(6 + d + 1, encoder, head, seed, d)

    def plane_features(self, theta):
        """Translation-invariant plane input: closest point to the origin (scaled) and unit normal.

        Returns the 6 features and their Jacobian w.r.t. the raw [p, n~] parameters.
        """
        theta = np.asarray(theta, dtype=float)
        p, nt = theta[:3], theta[3:6]
        norm = np.linalg.norm(nt)
        n = nt / norm
        off = float(n @ p)
        feat = np.concatenate([off * n / P_SCALE, n])
        J = np.zeros((6, 6))
        J[:3, :3] = np.outer(n, n) / P_SCALE
        dn = (np.eye(3) - np.outer(n, n)) / norm  # dn/dn~
        J[:3, 3:] = (off * np.eye(3) + np.outer(n, p)) @ dn / P_SCALE
        J[3:, 3:] = dn
        return feat, J

    def extras(self, theta, q, scale):
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != self.d:
            raise ValueError(f"q has length {q.shape[-1]}, net expects {self.d}")
        return np.concatenate([self.plane_features(theta)[0], q, [scale]])

    def forward(self, P, q, cloud) -> float:
        obs = cloud if isinstance(cloud, Observation) else observe(cloud)
        theta = P.params() if isinstance(P, Plane) else P
        return float(self.predict([obs], self.extras(theta, q, obs.scale)[None], [0])[0])

    def input_grad(self, theta, q_batch, obs_list, pooled=None):
        """ŝ over every (q, object) pair with gradients w.r.t. the raw plane params and each q."""
        q_batch = np.atleast_2d(np.asarray(q_batch, dtype=float))
        if q_batch.shape[1] != self.d:
            raise ValueError(f"q has length {q_batch.shape[1]}, net expects {self.d}")
        feat, J = self.plane_features(theta)
        if pooled is None:
            pooled = [self.encode(o.points)[0] for o in obs_list]
        B, O = len(q_batch), len(obs_list)
        rows = []
        for b in range(B):
            for o in range(O):
                rows.append(np.concatenate([pooled[o], feat, q_batch[b], [obs_list[o].scale]]))
        s, cache = self.head_forward(np.array(rows))
        dh = self.head_backward(cache, s * (1 - s))
        w = self.encoder[-1]
        d_theta = (dh[:, w:w + 6] @ J).reshape(B, O, 6)
        d_q = dh[:, w + 6:w + 6 + self.d].reshape(B, O, self.d)
        return s.reshape(B, O), d_theta, d_q

    # hooks used by the plane optimiser

    def observe(self, shape):
        obs = observe(shape)
        return obs, self.encode(obs.points)[0]

    def design_phys(self, theta, q_batch, observations):
        """Sum over the batch of the mean over objects of -ŝ, its gradients, and the per-member values."""
        obs = [o for o, _ in observations]
        pooled = [f for _, f in observations]
        s, d_theta, d_q = self.input_grad(theta, q_batch, obs, pooled)
        O = len(obs)
        member = -s.mean(axis=1)
        return float(member.sum()), -d_theta.sum(axis=(0, 1)) / O, -d_q.sum(axis=1) / O, member


class SwitcherNet(PointNetClassifier):
    """Grasp-type classifier: 1 = precise, 0 = power."""

    kind = "switcher"

    def __init__(self, encoder=(64, 128), head=(256, 128), seed: int | None = 0):
        super().__init__(1, encoder, head, seed, 0)

    def forward(self, cloud) -> float:
        obs = cloud if isinstance(cloud, Observation) else observe(cloud)
        return float(self.predict([obs], np.array([[obs.scale]]), [0])[0])


def load_net(path_or_dict) -> PointNetClassifier:
    d = path_or_dict if isinstance(path_or_dict, dict) else json.loads(Path(path_or_dict).read_text())
    a = d["arch"]
    if a["kind"] == "surrogate":
        net = SurrogateNet(a["d"], a["encoder"], a["head"], seed=None)
    elif a["kind"] == "switcher":
        net = SwitcherNet(a["encoder"], a["head"], seed=None)
    else:
        net = PointNetClassifier(a["extra"], a["encoder"], a["head"], seed=None, d=a.get("d", 0))
    if [list(s) for s in net.shapes] != [list(s) for s in d["shapes"]]:
        raise ValueError("weight shapes do not match the architecture")
    net.set_flat(d["data"])
    return net


def zero_net(net: PointNetClassifier) -> PointNetClassifier:
    out = net.copy()
    out.params = [np.zeros_like(p) for p in net.params]
    return out


def e_phys_grad(net: SurrogateNet, P, q, cloud):
    """(E_phys, dE/d[p, n], dE/dq) with E_phys = -ŝ."""
    obs = cloud if isinstance(cloud, Observation) else observe(cloud)
    theta = P.params() if isinstance(P, Plane) else np.asarray(P, dtype=float)
    s, d_theta, d_q = net.input_grad(theta, np.asarray(q, dtype=float)[None], [obs])
    return -float(s[0, 0]), -d_theta[0, 0], -d_q[0, 0]


def classify_grasp_type(switcher: SwitcherNet, cloud) -> tuple[str, float]:
    s = switcher.forward(cloud)
    return ("precise" if s >= 0.5 else "power"), float(max(s, 1 - s))


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainOptions:
    epochs: int = 200
    batch: int = 32
    lr: float = 1e-2
    momentum: float = 0.9
    seed: int = 0


@dataclass
class Dataset:
    """Rows of side inputs pointing into a list of distinct observations."""

    observations: list
    extras: np.ndarray
    which: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        used = sorted(set(self.which[idx].tolist()))
        remap = {u: i for i, u in enumerate(used)}
        return ([self.observations[u] for u in used], self.extras[idx],
                np.array([remap[w] for w in self.which[idx]]), self.labels[idx])


def surrogate_dataset(net: SurrogateNet, examples, shapes: dict) -> Dataset:
    """Build a training set from labelled examples; ``shapes`` maps cloud_ref to ObjectShape or cloud."""
    refs = sorted({e.cloud_ref for e in examples})
    missing = [r for r in refs if r not in shapes]
    if missing:
        raise KeyError(f"unresolved cloud_ref {missing[0]!r}")
    obs = [observe(shapes[r]) for r in refs]
    index = {r: i for i, r in enumerate(refs)}
    extras = np.array([net.extras(e.plane, e.q, obs[index[e.cloud_ref]].scale) for e in examples])
    return Dataset(obs, extras, np.array([index[e.cloud_ref] for e in examples]),
                   np.array([e.label for e in examples], dtype=float))


def switcher_dataset(shapes: Sequence, labels: Sequence[int]) -> Dataset:
    obs = [observe(s) for s in shapes]
    return Dataset(obs, np.array([[o.scale] for o in obs]), np.arange(len(obs)), np.asarray(labels, dtype=float))


def train(net: PointNetClassifier, data: Dataset, opts: TrainOptions = TrainOptions()):
    """Mini-batch momentum descent on mean BCE. Returns (trained copy, per-epoch full-data loss)."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if len(np.unique(data.labels)) < 2:
        raise ValueError("dataset has a single class")
    net = net.copy()
    rng = np.random.default_rng(opts.seed)
    velocity = [np.zeros_like(p) for p in net.params]
    full = (data.observations, data.extras, data.which, data.labels)
    curve = []
    for _ in range(opts.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), opts.batch):
            _, grads = net.loss_and_grad(*data.subset(order[start:start + opts.batch]))
            for p, v, g in zip(net.params, velocity, grads):
                v *= opts.momentum
                v -= opts.lr * g
                p += v
        curve.append(net.loss_and_grad(*full, grad=False)[0])
    return net, curve


def accuracy(net: PointNetClassifier, data: Dataset) -> float:
    s = net.predict(data.observations, data.extras, data.which)
    return float(np.mean((s >= 0.5) == (data.labels >= 0.5)))


# --------------------------------------------------------------------------
# dataset files


def write_jsonl(path, records, meta: dict | None = None) -> None:
    lines = []
    if meta is not None:
        lines.append(json.dumps({"_meta": meta}, sort_keys=True))
    lines += [json.dumps(r, sort_keys=True) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_jsonl(path) -> tuple[dict | None, list]:
    meta, rows = None, []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        if "_meta" in d:
            meta = d["_meta"]
        else:
            rows.append(d)
    return meta, rows
