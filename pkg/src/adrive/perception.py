"""Ideal on-board sensing: who is nearby, how they move, and whether they talk."""

from __future__ import annotations

import enum
import math
from typing import Iterable, NamedTuple, Protocol

from .channel import NeighborTable
from .road import RoadScene
from .vehicle import STOPPED_SPEED, Vehicle

DEFAULT_SENSOR_RANGE_M = 80.0
ASSOCIATION_GATE_M = 2.0


class MotionClass(enum.Enum):
    STOPPED = "stopped"
    ADVANCING = "advancing"
    RECEDING = "receding"


def motion_class(speed: float) -> MotionClass:
    if abs(speed) < STOPPED_SPEED:
        return MotionClass.STOPPED
    return MotionClass.RECEDING if speed < 0 else MotionClass.ADVANCING


class PerceivedVehicle(NamedTuple):
    target_id: int
    path_id: str
    s: float
    dx: float
    dy: float
    speed: float
    motion: MotionClass
    connected_believed: bool = False

    @property
    def distance(self) -> float:
        return math.hypot(self.dx, self.dy)


class WorldView(Protocol):
    scene: RoadScene

    def all_vehicles(self) -> Iterable[Vehicle]: ...


def position(scene: RoadScene, veh: Vehicle) -> tuple[float, float]:
    path = scene.paths[veh.path_id]
    x, y, _ = path.locate(min(max(veh.s, 0.0), path.length))
    return x, y


def sense(vehicle: Vehicle, world: WorldView, sensor_range_m: float = DEFAULT_SENSOR_RANGE_M) -> list[PerceivedVehicle]:
    if sensor_range_m <= 0:
        raise ValueError("sensor_range_m must be positive")
    scene = world.scene
    ox, oy = position(scene, vehicle)
    out = []
    for other in world.all_vehicles():
        if other is vehicle:
            continue
        x, y = position(scene, other)
        dx, dy = x - ox, y - oy
        if dx * dx + dy * dy <= sensor_range_m * sensor_range_m:
            out.append(PerceivedVehicle(other.id, other.path_id, other.s, dx, dy, other.v, motion_class(other.v)))
    return out


def classify_connected(
    vehicle: Vehicle,
    perceived: Iterable[PerceivedVehicle],
    table: NeighborTable,
    now: float,
    scene: RoadScene,
    gate_m: float = ASSOCIATION_GATE_M,
) -> dict[int, bool]:
    """Match each perceived vehicle against fresh beacons within a position gate.

    Beacon positions are dead-reckoned to ``now`` along their heading.
    """
    ox, oy = position(scene, vehicle)
    projected = []
    for b in table.fresh(now):
        lag = now - b.timestamp
        projected.append((b.x + b.velocity * lag * math.cos(b.heading), b.y + b.velocity * lag * math.sin(b.heading)))
    result = {}
    for p in perceived:
        px, py = ox + p.dx, oy + p.dy
        result[p.target_id] = any(math.hypot(px - bx, py - by) <= gate_m for bx, by in projected)
    return result


def follower_presence(vehicle: Vehicle, world: WorldView, sensor_range_m: float = DEFAULT_SENSOR_RANGE_M) -> bool:
    return any(p.path_id == vehicle.path_id and p.s < vehicle.s for p in sense(vehicle, world, sensor_range_m))
