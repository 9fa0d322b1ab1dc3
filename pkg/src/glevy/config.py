"""Run configuration (JSON, ``"schema": 1``) and the built-in benchmark models."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, GLevyError
from .model import UncertaintySet
from .payoff import TerminalFunction, parse
from .pide import Grid

SCHEMA = 1
SECTIONS = {"schema", "model", "grid", "payoff", "mc", "cylinder", "field", "checks", "seed",
            "report_radius", "name"}

QUADRATIC = {
    "schema": 1,
    "name": "quadratic",
    "model": {"d": 1, "measures": [], "vols": [0.5, 1.0]},
    "grid": {"x_min": -6.0, "x_max": 6.0, "nx": 801, "T": 0.5},
    "payoff": {"clip": {"sq": {"var": 0}}, "lo": 0.0, "hi": 100.0},
    "mc": {"n_paths": 100000, "mesh_dt": 0.01},
    "seed": 20240607,
}

JUMP = {
    "schema": 1,
    "name": "jump",
    "model": {"d": 1, "measures": [[{"z": 1.0, "w": 2.0}]], "vols": [0.0]},
    "grid": {"x_min": -8.0, "x_max": 8.0, "nx": 801, "T": 0.25, "dt_max": 0.001},
    "payoff": {"clip": {"var": 0}, "lo": -50.0, "hi": 50.0},
    "mc": {"n_paths": 100000, "mesh_dt": 0.01},
    "seed": 20240607,
}

TWO_MEASURE = {
    "schema": 1,
    "name": "two-measure",
    "model": {"d": 1,
              "measures": [[{"z": 1.0, "w": 1.0}, {"z": -0.5, "w": 0.5}],
                           [{"z": 1.0, "w": 2.0}, {"z": -0.5, "w": 0.25}]],
              "vols": [0.5, 1.0], "sigma_lower_sq": 0.1},
    "grid": {"x_min": -6.0, "x_max": 6.0, "nx": 241, "T": 0.25},
    "payoff": {"clip": {"abs": {"var": 0}}, "lo": 0.0, "hi": 2.0},
    "mc": {"n_paths": 100000, "mesh_dt": 0.05},
    "field": {"times": [0.0, 0.5, 1.0], "marks": [{"var": 0}],
              "F": [[-1.0], [{"clip": {"var": 0}, "lo": -1.0, "hi": 1.0}]]},
    "seed": 20240607,
}

BUILTIN = {"quadratic": QUADRATIC, "jump": JUMP, "two-measure": TWO_MEASURE}


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def digest(cfg: dict) -> str:
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()


@dataclass
class RunConfig:
    """Validated configuration; ``raw`` keeps the parsed JSON for the digest."""

    raw: dict

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        text = str(path)
        if text.startswith("builtin:"):
            key = text.split(":", 1)[1]
            if key not in BUILTIN:
                raise ConfigError(f"unknown builtin config {key!r}; choose from {sorted(BUILTIN)}")
            return cls.from_dict(copy.deepcopy(BUILTIN[key]))
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported schema {data.get('schema')!r}; expected {SCHEMA}")
        extra = set(data) - SECTIONS
        if extra:
            raise ConfigError(f"unknown config sections {sorted(extra)}")
        if "model" not in data:
            raise ConfigError("config has no model section")
        cfg = cls(data)
        try:
            cfg.model()
            if "grid" in data:
                cfg.grid()
            if "payoff" in data:
                parse(data["payoff"])
        except ConfigError:
            raise
        except (GLevyError, TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        return cfg

    @property
    def digest(self) -> str:
        return digest(self.raw)

    def model(self) -> UncertaintySet:
        return UncertaintySet.from_config(self.raw["model"])

    def grid(self) -> Grid:
        if "grid" not in self.raw:
            raise ConfigError("config has no grid section")
        g = dict(self.raw["grid"])
        if "report_radius" in self.raw and "report_radius" not in g:
            g["report_radius"] = self.raw["report_radius"]
        return Grid.from_config(g)

    def terminal(self) -> TerminalFunction:
        if "payoff" not in self.raw:
            raise ConfigError("config has no payoff section")
        return TerminalFunction.from_payoff(parse(self.raw["payoff"]))

    def section(self, name: str) -> dict:
        if name not in self.raw:
            raise ConfigError(f"config has no {name} section")
        return self.raw[name]

    def seed(self, override: int | None = None) -> int:
        if override is not None:
            return int(override)
        seed = self.raw.get("seed", self.raw.get("mc", {}).get("seed"))
        if seed is None:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return int(seed)
