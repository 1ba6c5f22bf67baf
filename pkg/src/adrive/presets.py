"""Hand-placed failure scenarios, one per kind of deadlock in the taxonomy.

Each preset has no random traffic; the vehicles are scripted so that the
deadlock forms within a few seconds.  Both protocols must resolve every
preset without a collision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .config import ScriptedVehicle, SimConfig
from .road import four_way_scene, single_track_scene
from .vehicle import FailureProfile, VehicleKind
from .world import WorldParams

PRESET_DURATION_S = 180.0


@dataclass(frozen=True)
class Preset:
    name: str
    summary: str
    build: Callable[[str], SimConfig]

    def config(self, protocol: str = "adrive", seed: int = 0) -> SimConfig:
        return self.build(protocol).replace(seed=seed)


def _base(scene: dict, protocol: str, vehicles, **kw) -> SimConfig:
    return SimConfig(
        scene=scene,
        protocol=protocol,
        duration_s=PRESET_DURATION_S,
        scoring_window_s=PRESET_DURATION_S,
        volume_vph=0.0,
        vehicles=tuple(vehicles),
        **kw,
    )


def _stops(scene_doc: dict) -> dict[str, float]:
    from .config import SimConfig as _C

    scene = _C(scene=scene_doc).build_scene()
    return {pid: scene.section_of(pid).stop_lines[pid] for pid in scene.paths}


def _four_way_tie(protocol: str) -> SimConfig:
    doc = {"generator": {"kind": "four_way"}}
    stops = _stops(doc)
    # every clock runs late, so each vehicle thinks the others were first
    late = FailureProfile(clock_skew_s=1.0)
    vehicles = [ScriptedVehicle(pid, stops[pid], failure=late) for pid in ("north", "east", "south", "west")]
    return _base(doc, protocol, vehicles)


def _four_way_overshoot(protocol: str) -> SimConfig:
    doc = {"generator": {"kind": "four_way"}}
    stops = _stops(doc)
    vehicles = [
        # a long vehicle crossing the box holds north at its line
        ScriptedVehicle("west", stops["west"] + 1.0, v=5.0, length=16.0, cleared=True),
        # first at its line, so the latecomer should wait for it
        ScriptedVehicle("north", stops["north"]),
        ScriptedVehicle("east", stops["east"] - 12.0, v=5.0, failure=FailureProfile(overshoot_m=3.5)),
        ScriptedVehicle("east", stops["east"] - 30.0, v=5.0),
    ]
    return _base(doc, protocol, vehicles)


def _single_track_overshoot(protocol: str) -> SimConfig:
    doc = {"generator": {"kind": "single_track", "length_m": 40.0}}
    stops = _stops(doc)
    vehicles = [
        ScriptedVehicle("west", stops["west"]),
        ScriptedVehicle("west", stops["west"] - 7.0),
        ScriptedVehicle("east", stops["east"] - 15.0, t=0.5, v=6.0, failure=FailureProfile(overshoot_m=4.0)),
        ScriptedVehicle("east", stops["east"] - 30.0, t=0.5, v=6.0),
    ]
    return _base(doc, protocol, vehicles)


def _left_turn_offset(protocol: str) -> SimConfig:
    doc = {"generator": {"kind": "four_way", "left_turn_from": "west"}}
    stops = _stops(doc)
    vehicles = [
        ScriptedVehicle("south", stops["south"] + 1.0, v=5.0, length=16.0, cleared=True),
        # a truck waits at its line; the turner's believed stop line lies inside the box
        ScriptedVehicle("east", stops["east"], length=12.0),
        ScriptedVehicle("west", stops["west"] - 12.0, v=5.0, failure=FailureProfile(localization_offset_m=-3.0)),
        ScriptedVehicle("west", stops["west"] - 30.0, v=5.0),
    ]
    return _base(doc, protocol, vehicles)


def _long_lane_late_detection(protocol: str) -> SimConfig:
    doc = {"generator": {"kind": "single_track", "length_m": 100.0}}
    stops = _stops(doc)
    vehicles = []
    for pid in ("east", "west"):
        head = stops[pid] - 20.0
        # neither head can see the other end of the lane, so both commit
        vehicles.append(ScriptedVehicle(pid, head, v=10.0))
        vehicles.append(ScriptedVehicle(pid, head - 18.0, v=10.0))
        vehicles.append(ScriptedVehicle(pid, head - 36.0, v=10.0))
    vehicles[3] = ScriptedVehicle("west", stops["west"] - 20.0, v=10.0, kind=VehicleKind.NON_CONNECTED)
    return _base(doc, protocol, vehicles, world=WorldParams(sensor_range=80.0))


PRESETS: dict[str, Preset] = {
    p.name: p
    for p in (
        Preset("four-way-tie", "four vehicles reach a four-way stop together and each yields to the others", _four_way_tie),
        Preset("four-way-overshoot", "a late arrival rolls past its stop line into the box", _four_way_overshoot),
        Preset("single-track-overshoot", "a vehicle rolls into a one-lane section held by the other side", _single_track_overshoot),
        Preset("left-turn-offset", "a left turner with a bad position fix waits inside the box next to a truck", _left_turn_offset),
        Preset("long-lane", "both ends of a 100 m one-lane section commit beyond sensor range", _long_lane_late_detection),
    )
}


def get(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
