"""Run configuration: one JSON file plus command-line overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .design import DesignOptions, DesignWeights
from .energy import PowerWeights
from .oracle import OracleOptions
from .surrogate import TrainOptions
from .synthesis import SynthOptions


class ConfigError(ValueError):
    pass


@dataclass
class LabelOptions:
    planes: int = 4
    seeds_per_pair: int = 5
    plane_iterations: int = 60
    plane_batch: int = 8
    init_jitter: float = 0.6


@dataclass
class RunConfig:
    global_seed: int = 0
    hand: str = ""
    objects: list = field(default_factory=list)
    eval_objects: list = field(default_factory=list)
    mode: str = "precise"
    seeds: int = 10
    n_points: int = 256
    inflation: float = 1e-3
    alpha_pre: float = 0.02
    alpha_over: float = 0.005
    w_phys: float = 0.0
    out: str = "runs/default"
    jobs: int = 1
    synth: dict = field(default_factory=dict)
    design: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    label: dict = field(default_factory=dict)

    # keys that change how a run executes but never what it produces
    EXCLUDED = ("out", "jobs")

    def validate(self) -> "RunConfig":
        if not isinstance(self.global_seed, int) or self.global_seed < 0:
            raise ConfigError("global_seed must be a non-negative integer")
        if self.mode not in ("precise", "power"):
            raise ConfigError(f"mode must be 'precise' or 'power', got {self.mode!r}")
        if self.seeds < 0:
            raise ConfigError("seeds must be >= 0")
        if self.n_points < 32:
            raise ConfigError("n_points must be >= 32")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        for name, cls in (("synth", SynthOptions), ("oracle", OracleOptions), ("train", TrainOptions),
                          ("label", LabelOptions)):
            _check_keys(getattr(self, name), cls, name)
        _check_keys({k: v for k, v in self.design.items() if k != "weights"}, DesignOptions, "design")
        _check_keys(self.design.get("weights", {}), DesignWeights, "design.weights")
        _check_keys(self.synth.get("power_weights", {}), PowerWeights, "synth.power_weights")
        return self

    # option objects

    def synth_options(self) -> SynthOptions:
        kw = dict(self.synth)
        if "power_weights" in kw:
            kw["power_weights"] = dataclasses.replace(SynthOptions().power_weights, **kw["power_weights"])
        return SynthOptions(**kw)

    def design_options(self) -> DesignOptions:
        kw = dict(self.design)
        weights = dict(kw.pop("weights", {}))
        weights.setdefault("phys", self.w_phys)
        kw.setdefault("seed", self.global_seed)
        return DesignOptions(weights=DesignWeights(**weights), **kw)

    def oracle_options(self) -> OracleOptions:
        return OracleOptions(**self.oracle)

    def train_options(self) -> TrainOptions:
        kw = dict(self.train)
        kw.setdefault("seed", self.global_seed)
        return TrainOptions(**kw)

    def label_options(self) -> LabelOptions:
        return LabelOptions(**self.label)

    # provenance

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in self.EXCLUDED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return {"tool_version": __version__, "config_hash": self.config_hash(), "global_seed": self.global_seed}


def _check_keys(d, cls, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (optional) and apply overrides; flags win over the file."""
    data = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{p}: line {e.lineno}: {e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{p}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        cfg = RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


def replace(cfg: RunConfig, **kw) -> RunConfig:
    return dataclasses.replace(cfg, **kw).validate()
