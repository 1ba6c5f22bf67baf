"""Run configuration: dataclasses, YAML loading and validation.

The full schema is documented in docs/config.md.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .channel import ChannelParams
from .cost import CostParams
from .road import RoadScene, load_scene, scene_from_dict
from .vehicle import FailureProfile, VehicleKind
from .world import WorldParams

PROTOCOL_NAMES = ("adrive", "lane_priority")
BEACON_INTERVAL_S = 0.1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrafficMix:
    non_connected: float = 0.0
    human: float = 0.0

    def __post_init__(self):
        if self.non_connected < 0 or self.human < 0 or self.non_connected + self.human > 1:
            raise ConfigError("mix fractions must be >= 0 and sum to at most 1")


@dataclass(frozen=True)
class ScriptedVehicle:
    """A vehicle placed by hand, used by the failure presets and tests."""

    path: str
    s: float
    t: float = 0.0
    v: float = 0.0
    kind: VehicleKind = VehicleKind.CONNECTED
    length: float = 4.5
    failure: FailureProfile = FailureProfile()
    cleared: bool = False


@dataclass(frozen=True)
class SimConfig:
    scene: Mapping[str, Any] | str = field(default_factory=lambda: {"generator": {"kind": "single_track", "length_m": 100.0}})
    protocol: str = "adrive"
    duration_s: float = 1800.0
    scoring_window_s: float = 1200.0
    drain_cap_s: float = 600.0
    dt: float = 0.05
    volume_vph: float = 400.0
    # per-path override of volume_vph
    arrivals: Mapping[str, float] = field(default_factory=dict)
    mix: TrafficMix = TrafficMix()
    cost: CostParams = CostParams()
    channel: ChannelParams = ChannelParams()
    world: WorldParams = WorldParams()
    human_patience_s: float = 10.0
    vehicles: tuple[ScriptedVehicle, ...] = ()
    seed: int = 0
    abort_on_collision: bool = True

    def __post_init__(self):
        if self.protocol not in PROTOCOL_NAMES:
            raise ConfigError(f"protocol must be one of {PROTOCOL_NAMES}, got {self.protocol!r}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        ratio = BEACON_INTERVAL_S / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError(f"dt={self.dt} must divide the {BEACON_INTERVAL_S} s beacon interval")
        if self.duration_s < self.scoring_window_s or self.scoring_window_s < 0:
            raise ConfigError("need duration_s >= scoring_window_s >= 0")
        if self.drain_cap_s < 0:
            raise ConfigError("drain_cap_s must be >= 0")
        if self.volume_vph < 0 or any(r < 0 for r in self.arrivals.values()):
            raise ConfigError("arrival rates must be >= 0")
        if self.human_patience_s <= 0:
            raise ConfigError("human_patience_s must be positive")
        if abs(self.world.dt - self.dt) > 1e-12:
            object.__setattr__(self, "world", dataclasses.replace(self.world, dt=self.dt))

    @property
    def beacon_every(self) -> int:
        return round(BEACON_INTERVAL_S / self.dt)

    def build_scene(self) -> RoadScene:
        if isinstance(self.scene, str):
            return load_scene(self.scene)
        return scene_from_dict(self.scene)

    def rate_for(self, path_id: str) -> float:
        return float(self.arrivals.get(path_id, self.volume_vph))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


# -- dict / YAML conversion ---------------------------------------------------


def _sub(cls, doc: Mapping | None, what: str):
    if doc is None:
        return cls()
    known = {f.name for f in dataclasses.fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown {what} keys: {sorted(extra)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _vehicle(doc: Mapping) -> ScriptedVehicle:
    doc = dict(doc)
    try:
        kind = VehicleKind(doc.pop("kind", "cav"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    failure = _sub(FailureProfile, doc.pop("failure", None), "failure")
    if "path" not in doc or "s" not in doc:
        raise ConfigError("scripted vehicles need 'path' and 's'")
    return _sub(ScriptedVehicle, {**doc, "kind": kind, "failure": failure}, "vehicle")


def config_from_dict(doc: Mapping, base_dir: str | Path | None = None) -> SimConfig:
    doc = dict(doc)
    known = {f.name for f in dataclasses.fields(SimConfig)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    kw: dict[str, Any] = {}
    for key, value in doc.items():
        if key == "mix":
            kw[key] = _sub(TrafficMix, value, "mix")
        elif key == "cost":
            kw[key] = _sub(CostParams, value, "cost")
        elif key == "channel":
            kw[key] = _sub(ChannelParams, value, "channel")
        elif key == "world":
            kw[key] = _sub(WorldParams, value, "world")
        elif key == "vehicles":
            kw[key] = tuple(_vehicle(v) for v in value or ())
        elif key == "scene" and isinstance(value, str) and base_dir is not None and not Path(value).is_absolute():
            kw[key] = str(Path(base_dir) / value)
        elif key == "arrivals":
            kw[key] = {str(k): float(v) for k, v in (value or {}).items()}
        else:
            kw[key] = value
    try:
        return SimConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> SimConfig:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(doc, base_dir=path.parent)


def validate(config: SimConfig) -> list[str]:
    """Problems that only show up once the scene is built; empty when fine."""
    problems = []
    try:
        scene = config.build_scene()
    except (OSError, ValueError, KeyError) as exc:
        return [f"scene: {exc}"]
    for pid in config.arrivals:
        if pid not in scene.paths:
            problems.append(f"arrivals: unknown path {pid!r}")
    for i, v in enumerate(config.vehicles):
        if v.path not in scene.paths:
            problems.append(f"vehicles[{i}]: unknown path {v.path!r}")
        elif not (0 <= v.s - v.length and v.s <= scene.paths[v.path].length):
            problems.append(f"vehicles[{i}]: s={v.s} does not fit on path {v.path!r}")
    if not any(scene.section_of(p) for p in scene.paths):
        problems.append("scene has no critical section")
    if not math.isfinite(config.duration_s):
        problems.append("duration_s must be finite")
    return problems
