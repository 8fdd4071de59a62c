"""Experiment configuration: YAML/JSON ingestion, validation, stable hashing, presets."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .levy_model import (DiscreteMeasure, LevyModel, ShellPartition, shell_partition,
                         stable_like, two_sided_exponential)

__all__ = ["ConfigError", "ExperimentConfig", "KINDS", "PRESETS", "preset", "load_config",
           "build_model"]

KINDS = ("sample-paths", "verify-duality", "verify-isometry", "bridge-check", "verify-ito",
         "verify-ito-fv", "energy-check", "epsilon-study", "psi-algebra", "derivative-check")

_DENSITIES = {"two_sided_exponential": two_sided_exponential, "stable_like": stable_like}


class ConfigError(ValueError):
    """Invalid or unresolvable configuration."""


@dataclass
class ExperimentConfig:
    kind: str
    name: str = "experiment"
    model: dict = field(default_factory=dict)
    partition: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(data) - {"kind", "name", "model", "partition", "grid", "ensemble", "params"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data:
            raise ConfigError("config needs a 'kind'")
        cfg = cls(**copy.deepcopy(data))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "model": copy.deepcopy(self.model),
                "partition": copy.deepcopy(self.partition), "grid": copy.deepcopy(self.grid),
                "ensemble": copy.deepcopy(self.ensemble), "params": copy.deepcopy(self.params)}

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @property
    def hash(self) -> str:
        """SHA-256 of the canonical JSON form; formatting of the source file is irrelevant."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: int | None = None, paths: int | None = None):
        data = self.to_dict()
        if seed is not None:
            data["ensemble"]["seed"] = int(seed)
        if paths is not None:
            data["ensemble"]["paths"] = int(paths)
        return ExperimentConfig.from_dict(data)

    # -- accessors with defaults --------------------------------------------

    @property
    def T(self) -> float:
        return float(self.model.get("T", 1.0))

    @property
    def M(self) -> int:
        return int(self.grid.get("M", 512))

    @property
    def paths(self) -> int:
        return int(self.ensemble.get("paths", 100_000))

    @property
    def seed(self) -> int:
        return int(self.ensemble.get("seed", 0))

    @property
    def block_size(self) -> int:
        return int(self.ensemble.get("block_size", 2000))

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        for key in ("model", "partition", "grid", "ensemble", "params"):
            if not isinstance(getattr(self, key), dict):
                raise ConfigError(f"'{key}' must be a mapping")
        checks = [("T", self.T, 0), ("M", self.M, 0), ("paths", self.paths, 0),
                  ("block_size", self.block_size, 0)]
        try:
            checks.append(("sigma", float(self.model.get("sigma", 1.0)), -1e-300))
            checks.append(("K", int(self.partition.get("K", 3)), 0))
            ratio = float(self.partition.get("ratio", 0.5))
            float(self.model.get("gamma", 0.0))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid numeric field: {exc}") from None
        for name, value, low in checks:
            if not value > low:
                raise ConfigError(f"'{name}' must be positive (got {value})")
        if not 0 < ratio < 1:
            raise ConfigError("'ratio' must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("'seed' must be non-negative")
        build_model(self)


def build_model(cfg: ExperimentConfig) -> LevyModel:
    nu = cfg.model.get("nu", {"kind": "discrete", "atoms": []})
    kind = nu.get("kind", "discrete")
    try:
        if kind in ("discrete", "empty"):
            measure = DiscreteMeasure(tuple((float(x), float(m)) for x, m in nu.get("atoms", [])))
        elif kind == "density":
            if nu.get("name") not in _DENSITIES:
                raise ConfigError(f"unknown density {nu.get('name')!r}")
            measure = _DENSITIES[nu["name"]](**nu.get("params", {}))
        else:
            raise ConfigError(f"unknown measure kind {kind!r}")
        return LevyModel(float(cfg.model.get("gamma", 0.0)), float(cfg.model.get("sigma", 1.0)),
                         measure, cfg.T)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def build_partition(cfg: ExperimentConfig, model: LevyModel) -> ShellPartition:
    return shell_partition(model, int(cfg.partition.get("K", 3)),
                           float(cfg.partition.get("ratio", 0.5)))


def load_config(path: str | Path) -> ExperimentConfig:
    """Read YAML (JSON is a subset) from ``path``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return ExperimentConfig.from_dict(data)


# --------------------------------------------------------------------------
# presets: one per acceptance check, plus a path-sampling demo
# --------------------------------------------------------------------------

_TWO_ATOMS = {"kind": "discrete", "atoms": [[0.5, 1.0], [-0.5, 1.0]]}
_STD = {"gamma": 0.0, "sigma": 1.0, "T": 1.0, "nu": _TWO_ATOMS}

PRESETS = {
    "sample-two-atom": {
        "kind": "sample-paths", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 512}, "ensemble": {"paths": 100_000, "seed": 11},
        "params": {"dump": 5},
    },
    "isometry-catalog": {
        "kind": "verify-isometry", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 512}, "ensemble": {"paths": 100_000, "seed": 1},
        "params": {"kernels": []},
    },
    "duality-grid": {
        "kind": "verify-duality", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 64}, "ensemble": {"paths": 20_000, "seed": 2},
        "params": {"fields": ["det_slice", "det_jump", "WT_slice", "sinWT_mixed", "cosS_jump",
                              "mixed_sum"],
                   "functionals": ["W_T", "sin_WT", "S_T_sq", "cos_S_T"]},
    },
    "psi-algebra": {
        "kind": "psi-algebra", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 512}, "ensemble": {"paths": 1000, "seed": 3},
        "params": {"draws": 1000, "max_ulps": 4.0},
    },
    "derivative-fd": {
        "kind": "derivative-check", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 512}, "ensemble": {"paths": 200, "seed": 4},
        "params": {"times": 8, "rel_tol": 1e-6},
    },
    "anticipating-energy": {
        "kind": "energy-check", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 64}, "ensemble": {"paths": 100_000, "seed": 5},
        "params": {"fields": ["det_slice", "det_jump", "WT_slice", "sinWT_mixed", "cosS_jump"],
                   "closed_form_times": [0.25, 0.5, 1.0], "n_time": 8,
                   "seminorm_paths": 10_000},
    },
    "bridge-two-atom": {
        "kind": "bridge-check", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 128}, "ensemble": {"paths": 100_000, "seed": 6},
        "params": {"fields": ["deterministic", "adapted", "jump_blind", "jump_anticipating"],
                   "region": [0.25, 1.0]},
    },
    "adapted-ito-bm": {
        "kind": "verify-ito", "model": {"gamma": 0.0, "sigma": 1.0, "T": 1.0,
                                        "nu": {"kind": "discrete", "atoms": []}},
        "partition": {"K": 1}, "grid": {"M": 1024}, "ensemble": {"paths": 100_000, "seed": 7},
        "params": {"spec": "brownian", "F": "square", "refinement": [128, 256, 512, 1024],
                   "order_range": [0.35, 0.65], "max_relative_rms": 0.01},
    },
    "fv-pure-jump": {
        "kind": "verify-ito-fv", "model": {"gamma": 0.0, "sigma": 0.0, "T": 1.0,
                                           "nu": {"kind": "discrete",
                                                  "atoms": [[0.5, 2.0], [-0.5, 1.0]]}},
        "partition": {"K": 3}, "grid": {"M": 512}, "ensemble": {"paths": 100_000, "seed": 8},
        "params": {"spec": "small-jump", "F": "square", "compare_general": True},
    },
    "anticipating-wt": {
        "kind": "verify-ito", "model": _STD, "partition": {"K": 3},
        "grid": {"M": 512}, "ensemble": {"paths": 100_000, "seed": 9},
        "params": {"spec": "anticipating-wt", "F": "sin", "grid_tolerance": 4.0},
    },
    "epsilon-two-atoms": {
        "kind": "epsilon-study", "model": {"gamma": 0.0, "sigma": 0.0, "T": 1.0,
                                           "nu": {"kind": "discrete",
                                                  "atoms": [[0.5, 1.0], [0.05, 5.0]]}},
        "partition": {"K": 6}, "grid": {"M": 64}, "ensemble": {"paths": 100_000, "seed": 10},
        "params": {"spec": "small-jump", "schedule": [1.0, 0.5, 0.25, 0.1, 0.06, 0.05, 0.04]},
    },
}


def preset(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    data = copy.deepcopy(PRESETS[name])
    data.setdefault("name", name)
    return ExperimentConfig.from_dict(data)
