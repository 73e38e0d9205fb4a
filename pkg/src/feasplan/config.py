"""Declarative run configuration loaded from JSON.

Every section is optional; missing values fall back to the module defaults.
Unknown keys anywhere are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import oracle, planner, tensorizer
from .evaluator import Settings
from .feasnet import TrainConfig
from .terrain import FAMILIES, TerrainError, TerrainSpec, check_spec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    terrain: TerrainSpec = field(default_factory=lambda: TerrainSpec("Steps", (4.0, 4.0), {"layout": "barrier"}, 0))
    training_terrains: tuple | None = None  # None -> shared default set
    archetypes: tuple = field(default_factory=lambda: tuple(oracle.default_archetypes()))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60))
    n_samples: int = 40000
    sigma_noise: float = oracle.SIGMA_NOISE
    sigma_reward: float = oracle.SIGMA_REWARD
    tau_low: float = tensorizer.TAU_LOW
    tau_high: float = tensorizer.TAU_HIGH
    f_min: float = planner.F_MIN
    start: tuple | None = None
    goal: tuple | None = None
    trials: int = 50
    tasks: int = 10
    adaptation_trials: int = 100
    adaptation_samples: int = 30000
    adaptation_epochs: int = 50
    skill_levels: tuple = (0.4, 0.7, 1.0)
    edge_margin: float = 0.02

    @property
    def settings(self):
        return Settings(self.edge_margin, self.tau_low, self.tau_high, self.f_min, self.sigma_noise, self.sigma_reward)

    def archetype(self, name: str) -> oracle.PolicyArchetype:
        for a in self.archetypes:
            if a.name == name:
                return a
        raise ConfigError(f"archetype {name!r} not in config; have {[a.name for a in self.archetypes]}")

    def to_dict(self) -> dict:
        """Resolved configuration in the same layout :func:`load_config` reads."""
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "terrain": _spec_dict(self.terrain),
            "training_terrains": None if self.training_terrains is None else [_spec_dict(s) for s in self.training_terrains],
            "archetypes": [_arch_dict(a) for a in self.archetypes],
            "train": {
                "alpha": self.train.alpha,
                "beta": self.train.beta,
                "learning_rate": self.train.learning_rate,
                "batch_size": self.train.batch_size,
                "epochs": self.train.epochs,
                "n_samples": self.n_samples,
                "sigma_noise": self.sigma_noise,
            },
            "reward": {"sigma": self.sigma_reward},
            "tensorizer": {"tau_low": self.tau_low, "tau_high": self.tau_high, "directions": tensorizer.DIRECTIONS},
            "planner": {
                "f_min": self.f_min,
                "start": None if self.start is None else list(self.start),
                "goal": None if self.goal is None else list(self.goal),
            },
            "evaluator": {
                "trials": self.trials,
                "tasks": self.tasks,
                "adaptation_trials": self.adaptation_trials,
                "adaptation_samples": self.adaptation_samples,
                "adaptation_epochs": self.adaptation_epochs,
                "skill_levels": list(self.skill_levels),
                "edge_margin": self.edge_margin,
            },
        }


def _spec_dict(s: TerrainSpec):
    return {"family": s.family, "extent": list(s.extent), "params": dict(s.params), "seed": s.seed}


def _arch_dict(a: oracle.PolicyArchetype):
    d = {"name": a.name, "id": a.id, "skill_level": a.skill_level}
    for k in oracle.CAP_KEYS:
        d[k] = getattr(a, k)
    d["max_lateral_slope_deg"] = math.degrees(d.pop("max_lateral_slope"))
    return d


def _take(section: dict, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected an object, got {type(section).__name__}")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return section


def _number(v, where, lo=None, hi=None, integer=False, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{where}: must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ConfigError(f"{where}: must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}: must be <= {hi}, got {v}")
    return int(v) if integer else float(v)


def _spec(d, where) -> TerrainSpec:
    _take(d, ("family", "extent", "params", "seed"), where)
    fam = d.get("family")
    if fam not in FAMILIES:
        raise ConfigError(f"{where}.family: expected one of {FAMILIES}, got {fam!r}")
    extent = d.get("extent", [4.0, 4.0])
    if not isinstance(extent, (list, tuple)) or len(extent) != 2:
        raise ConfigError(f"{where}.extent: expected [width_m, height_m]")
    extent = tuple(_number(e, f"{where}.extent", lo=0, lo_open=True) for e in extent)
    params = dict(d.get("params", {}))
    for k, v in params.items():
        if isinstance(v, list):
            params[k] = tuple(v)
    spec = TerrainSpec(fam, extent, params, _number(d.get("seed", 0), f"{where}.seed", integer=True))
    try:
        check_spec(spec)
    except TerrainError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return spec


def _cell(v, where):
    if v is None:
        return None
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{where}: expected [x, y]")
    return tuple(_number(c, where, lo=0, integer=True) for c in v)


def _archetypes(value, base: Path, where):
    if isinstance(value, str):
        path = (base / value) if not Path(value).is_absolute() else Path(value)
        if not path.is_file():
            raise ConfigError(f"{where}: archetype file {path} does not exist")
        try:
            return tuple(oracle.load_archetypes(path))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {path}: {exc}") from exc
    if not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list of archetypes or a file name")
    try:
        return tuple(oracle.archetypes_from_list(value))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_TOP = ("seed", "output_dir", "terrain", "training_terrains", "archetypes", "train", "reward", "tensorizer", "planner", "evaluator")


def config_from_dict(raw: dict, base: Path | str = ".") -> RunConfig:
    base = Path(base)
    _take(raw, _TOP, "config")
    cfg = RunConfig()
    kw = {}
    if "seed" in raw:
        kw["seed"] = _number(raw["seed"], "seed", lo=0, integer=True)
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise ConfigError("output_dir: expected a non-empty string")
        kw["output_dir"] = raw["output_dir"]
    if "terrain" in raw:
        kw["terrain"] = _spec(raw["terrain"], "terrain")
    if raw.get("training_terrains") is not None:
        lst = raw["training_terrains"]
        if not isinstance(lst, list) or not lst:
            raise ConfigError("training_terrains: expected a non-empty list")
        kw["training_terrains"] = tuple(_spec(s, f"training_terrains[{i}]") for i, s in enumerate(lst))
    if "archetypes" in raw:
        kw["archetypes"] = _archetypes(raw["archetypes"], base, "archetypes")

    t = _take(raw.get("train", {}), ("alpha", "beta", "learning_rate", "batch_size", "epochs", "n_samples", "sigma_noise"), "train")
    tkw = {}
    for k in ("alpha", "beta"):
        if k in t:
            tkw[k] = _number(t[k], f"train.{k}", lo=0, lo_open=True)
    if "learning_rate" in t:
        tkw["learning_rate"] = _number(t["learning_rate"], "train.learning_rate", lo=0)
    for k in ("batch_size", "epochs"):
        if k in t:
            tkw[k] = _number(t[k], f"train.{k}", lo=1, integer=True)
    kw["train"] = replace(cfg.train, seed=kw.get("seed", cfg.seed), **tkw)
    if "n_samples" in t:
        kw["n_samples"] = _number(t["n_samples"], "train.n_samples", lo=1, integer=True)
    if "sigma_noise" in t:
        kw["sigma_noise"] = _number(t["sigma_noise"], "train.sigma_noise", lo=0, hi=1)

    r = _take(raw.get("reward", {}), ("sigma",), "reward")
    if "sigma" in r:
        kw["sigma_reward"] = _number(r["sigma"], "reward.sigma", lo=0, lo_open=True)

    z = _take(raw.get("tensorizer", {}), ("tau_low", "tau_high", "directions"), "tensorizer")
    if "directions" in z and z["directions"] != tensorizer.DIRECTIONS:
        raise ConfigError(f"tensorizer.directions: only {tensorizer.DIRECTIONS} is supported")
    lo = _number(z.get("tau_low", cfg.tau_low), "tensorizer.tau_low", lo=0)
    hi = _number(z.get("tau_high", cfg.tau_high), "tensorizer.tau_high", lo=0)
    if not lo < hi:
        raise ConfigError(f"tensorizer: tau_low ({lo}) must be below tau_high ({hi})")
    kw["tau_low"], kw["tau_high"] = lo, hi

    p = _take(raw.get("planner", {}), ("f_min", "start", "goal"), "planner")
    if "f_min" in p:
        kw["f_min"] = _number(p["f_min"], "planner.f_min", lo=0, hi=1)
    kw["start"] = _cell(p.get("start"), "planner.start")
    kw["goal"] = _cell(p.get("goal"), "planner.goal")

    e = _take(
        raw.get("evaluator", {}),
        ("trials", "tasks", "adaptation_trials", "adaptation_samples", "adaptation_epochs", "skill_levels", "edge_margin"),
        "evaluator",
    )
    for k in ("trials", "tasks", "adaptation_trials", "adaptation_samples", "adaptation_epochs"):
        if k in e:
            kw[k] = _number(e[k], f"evaluator.{k}", lo=1, integer=True)
    if "skill_levels" in e:
        levels = e["skill_levels"]
        if not isinstance(levels, list) or not levels:
            raise ConfigError("evaluator.skill_levels: expected a non-empty list")
        kw["skill_levels"] = tuple(_number(v, "evaluator.skill_levels", lo=0, hi=1) for v in levels)
    if "edge_margin" in e:
        kw["edge_margin"] = _number(e["edge_margin"], "evaluator.edge_margin", lo=0, hi=1)
    return replace(cfg, **kw)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(raw, path.parent)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"

