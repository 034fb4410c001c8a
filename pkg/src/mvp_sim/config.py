"""Run configuration: nested dataclasses, JSON round-trip and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from mvp_sim.controller import POLICY_NAMES, ControllerConfig
from mvp_sim.errors import ConfigError
from mvp_sim.scene import CameraModel, GraspTolerances, SceneParams

GAMMA_GRID = (0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
BASELINES = ("single-view", "no-exploration", "fixed-25", "fixed-50")


@dataclass
class MapParams:
    J: int = 68
    K: int = 68
    cell_size: float = 0.005
    # None centres the map on the workspace
    origin: Optional[tuple[float, float]] = None
    n_q: int = 10
    n_phi: int = 18

    def validate(self) -> None:
        if int(self.J) != self.J or int(self.K) != self.K or self.J < 1 or self.K < 1:
            raise ConfigError("map.J and map.K must be integers >= 1")
        if not self.cell_size > 0:
            raise ConfigError("map.cell_size must be > 0")
        if self.n_q < 1 or self.n_phi < 1:
            raise ConfigError("map.n_q and map.n_phi must be >= 1")


@dataclass
class ExperimentParams:
    policy: str = "mvp"
    gammas: list[float] = field(default_factory=lambda: [0.0])
    runs: int = 7
    baseline_runs: int = 5
    objects: int = 20
    seed: int = 42
    # fixed time per attempt for the reach/grasp/transport phases not simulated
    t_overhead: float = 5.6
    attempt_cap_factor: float = 2.0
    # 0 means one worker per available CPU
    workers: int = 0

    def validate(self) -> None:
        if self.policy not in POLICY_NAMES:
            raise ConfigError(f"experiment.policy must be one of {', '.join(POLICY_NAMES)}")
        if not self.gammas:
            raise ConfigError("experiment.gammas must not be empty")
        if any(g < 0 for g in self.gammas):
            raise ConfigError("experiment.gammas must be >= 0")
        if self.runs < 1 or self.baseline_runs < 1:
            raise ConfigError("experiment.runs and experiment.baseline_runs must be >= 1")
        if self.objects < 1:
            raise ConfigError("experiment.objects must be >= 1")
        if self.t_overhead < 0:
            raise ConfigError("experiment.t_overhead must be >= 0")
        if not self.attempt_cap_factor > 0:
            raise ConfigError("experiment.attempt_cap_factor must be > 0")
        if self.workers < 0:
            raise ConfigError("experiment.workers must be >= 0")


@dataclass
class SimConfig:
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    scene: SceneParams = field(default_factory=SceneParams)
    map: MapParams = field(default_factory=MapParams)
    grasp: GraspTolerances = field(default_factory=GraspTolerances)
    experiment: ExperimentParams = field(default_factory=ExperimentParams)

    def validate(self) -> "SimConfig":
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        # the occlusion model needs the camera above every object
        if self.controller.z_min <= self.scene.height_range[1]:
            raise ConfigError("controller.z_min must exceed the tallest object (scene.height_range)")
        return self

    @property
    def map_origin(self) -> tuple[float, float]:
        if self.map.origin is not None:
            return tuple(self.map.origin)
        x0, x1, y0, y1 = self.scene.workspace
        return (0.5 * (x0 + x1) - 0.5 * self.map.J * self.map.cell_size,
                0.5 * (y0 + y1) - 0.5 * self.map.K * self.map.cell_size)

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        cfg = cls()
        _apply(cfg, data, "")
        return cfg

    def with_overrides(self, overrides: dict[str, Any]) -> "SimConfig":
        data = self.to_dict()
        for key, value in overrides.items():
            node = data
            parts = key.split(".")
            for part in parts[:-1]:
                if not isinstance(node.get(part), dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return SimConfig.from_dict(data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _coerce(value, default, key: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, (tuple, list)) or default is None:
        if value is None:
            return None
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        items = []
        for i, v in enumerate(value):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{key}[{i}]: expected a number, got {v!r}")
            items.append(v)
        return tuple(items) if isinstance(default, tuple) or default is None else list(items)
    return value


def _apply(target, data: dict, prefix: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(target)}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key {path!r}")
        current = getattr(target, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, path + ".")
        else:
            setattr(target, key, _coerce(value, current, path))


def parse_override(text: str) -> tuple[str, Any]:
    """``"controller.gamma=0.2"`` -> ``("controller.gamma", 0.2)``; values parse as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> SimConfig:
    """Defaults, then the JSON file, then overrides; validated."""
    cfg = SimConfig()
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = SimConfig.from_dict(data)
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()
