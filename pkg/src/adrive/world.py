"""Mutable traffic state for one run plus the geometric queries built on it.

Positions are arc-lengths of the front bumper.  Inside a critical section
the interaction between two paths is one of: same path (car following),
opposing (a single shared lane, compared through the affine map between
the two arc-lengths) or crossing (a conflict zone around one point).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from .road import Conflict, RoadScene
from .vehicle import Vehicle, VehicleState

ST = VehicleState

# states in which a vehicle is stopped at or inside its section and counts
# as a queue member for the stop-line order
QUEUED = (ST.WAIT, ST.IN_DEADLOCK)


@dataclass(frozen=True)
class WorldParams:
    dt: float = 0.05
    accel: float = 3.0
    v_back: float = 2.0
    min_gap: float = 2.0
    collision_gap: float = 0.5
    sensor_range: float = 80.0
    zone_half: float = 2.5
    zone_core: float = 1.25
    wait_detect: float = 3.0
    horizon: float = 5.0
    push_gap: float = 1.5
    join_gap: float = 6.0
    # how long before others notice that a vehicle has committed to enter
    reaction_s: float = 1.0
    # a vehicle this close behind a committed leader follows it through
    platoon_headway_s: float = 2.0


class PathInfo:
    __slots__ = ("id", "length", "entry", "exit", "stop", "conflicts", "start", "end", "priority")

    def __init__(self, scene: RoadScene, pid: str):
        path = scene.paths[pid]
        self.id = pid
        self.length = path.length
        sec = scene.section_of(pid)
        self.entry = sec.entrances[pid]
        self.exit = sec.exits[pid]
        self.stop = sec.stop_lines[pid]
        self.conflicts: list[tuple[str, Conflict]] = [
            (q, c) for (p, q), c in sorted(scene.conflicts.items()) if p == pid and c.kind != "none"
        ]
        tp = scene.trip_points.get(pid)
        self.start = tp.start if tp else 0.0
        self.end = tp.end if tp else path.length
        self.priority = scene.lane_priority.get(pid, 0)


class World:
    def __init__(self, scene: RoadScene, params: WorldParams | None = None):
        self.scene = scene
        self.params = params or WorldParams()
        self.info = {pid: PathInfo(scene, pid) for pid in scene.paths if scene.section_of(pid) is not None}
        self.lanes: dict[str, list[Vehicle]] = {pid: [] for pid in self.info}
        self.by_id: dict[int, Vehicle] = {}
        self.near: dict[str, list[Vehicle]] = {pid: [] for pid in self.info}
        self.v_cruise = scene.speed_limit
        self.t = 0.0
        self.tick = 0

    def refresh_near(self):
        """Cache vehicles close enough to a section to matter for conflicts.

        The margin covers a tick of motion plus a stop line pushed back by
        a localization error, so the cache can be refreshed once per tick.
        """
        for pid, pi in self.info.items():
            lo = pi.entry - 12.0
            self.near[pid] = [v for v in self.lanes[pid] if v.s > lo and v.rear < pi.exit]

    # -- population ----------------------------------------------------------

    def all_vehicles(self) -> Iterator[Vehicle]:
        for lane in self.lanes.values():
            yield from lane

    def add(self, veh: Vehicle):
        lane = self.lanes[veh.path_id]
        if lane and lane[-1].s <= veh.s:
            raise ValueError(f"vehicle {veh.id} would be inserted ahead of {lane[-1].id}")
        lane.append(veh)
        self.by_id[veh.id] = veh

    def remove(self, veh: Vehicle):
        self.lanes[veh.path_id].remove(veh)
        del self.by_id[veh.id]

    def leader_of(self, veh: Vehicle) -> Vehicle | None:
        lane = self.lanes[veh.path_id]
        i = lane.index(veh)
        return lane[i - 1] if i > 0 else None

    def follower_of(self, veh: Vehicle) -> Vehicle | None:
        lane = self.lanes[veh.path_id]
        i = lane.index(veh)
        return lane[i + 1] if i + 1 < len(lane) else None

    # -- geometry -------------------------------------------------------------

    def stop_point(self, veh: Vehicle) -> float:
        # the vehicle aims for the line as it believes its own position to be
        return self.info[veh.path_id].stop - veh.failure.localization_offset_m

    def occupies(self, veh: Vehicle) -> bool:
        pi = self.info[veh.path_id]
        return veh.s > pi.entry and veh.rear < pi.exit

    def in_zone(self, veh: Vehicle, c: float, half: float | None = None) -> bool:
        h = self.params.zone_half if half is None else half
        return veh.s > c - h and veh.rear < c + h

    def opposing_span(self, pid: str, other: Vehicle, offset: float) -> tuple[float, float] | None:
        """Part of ``other``'s body on the shared lane, in ``pid`` coordinates."""
        pi = self.info[pid]
        lo = max(pi.entry, offset - other.s)
        hi = min(pi.exit, offset - other.rear)
        return (lo, hi) if lo < hi else None

    def position(self, veh: Vehicle) -> tuple[float, float]:
        path = self.scene.paths[veh.path_id]
        x, y, _ = path.locate(min(max(veh.s, 0.0), path.length))
        return x, y

    def visible(self, a: Vehicle, b: Vehicle) -> bool:
        return math.dist(self.position(a), self.position(b)) <= self.params.sensor_range

    def conflicting(self, veh: Vehicle) -> Iterator[tuple[Vehicle, Conflict]]:
        for q, c in self.info[veh.path_id].conflicts:
            for other in self.near[q]:
                yield other, c

    def receding(self, veh: Vehicle) -> bool:
        return veh.state is ST.YIELDING

    # -- stop-line order and entry ---------------------------------------------

    def queue_key(self, veh: Vehicle, own: bool) -> tuple[float, int]:
        """Arrival order; a vehicle adds its own clock error to its own time only."""
        t = veh.arrived_at if veh.arrived_at is not None else self.t
        if own:
            t += veh.failure.clock_skew_s
        return (t, veh.id)

    def in_platoon(self, veh: Vehicle) -> bool:
        lead = self.leader_of(veh)
        if lead is None or not lead.cleared or lead.rear >= self.info[lead.path_id].exit:
            return False
        return lead.rear - veh.s <= self.params.platoon_headway_s * max(veh.v, 1.0)

    def entry_blockers(self, veh: Vehicle, fcfs: bool = True, ignore_receding: bool = False) -> list[Vehicle]:
        """Conflicting vehicles that keep ``veh`` from entering its section.

        Only what the vehicle can sense counts: occupants of the section,
        vehicles seen committing to a conflicting entrance (noticed only
        ``reaction_s`` after they commit) and, first come first served,
        vehicles that reached a conflicting stop line earlier.
        """
        out = []
        mine = None
        if fcfs and self.in_platoon(veh):
            fcfs = False
        for other, _ in self.conflicting(veh):
            if self.occupies(other):
                if ignore_receding and self.receding(other):
                    continue
            elif other.s > self.info[other.path_id].entry:
                continue
            elif not (other.cleared and other.cleared_at is not None and self.t - other.cleared_at >= self.params.reaction_s):
                if not (fcfs and other.state in QUEUED and other.arrived_at is not None):
                    continue
                if mine is None:
                    mine = self.queue_key(veh, own=True)
                if self.queue_key(other, own=False) >= mine:
                    continue
            if self.visible(veh, other):
                out.append(other)
        return out

    def body_blockers(self, veh: Vehicle, horizon: float, ignore_receding: bool = False) -> list[Vehicle]:
        """Conflicting bodies within ``horizon`` of the front, along the path."""
        out = []
        s = veh.s
        for other, c in self.conflicting(veh):
            if ignore_receding and self.receding(other):
                continue
            if c.kind == "opposing":
                span = self.opposing_span(veh.path_id, other, c.offset)
                if span is not None and -1e-9 <= span[0] - s <= horizon:
                    out.append(other)
            elif c.kind == "crossing":
                start = c.here - self.params.zone_half
                if not self.in_zone(veh, c.here) and -1e-9 <= start - s <= horizon and self.in_zone(other, c.there):
                    out.append(other)
        return out

    def blockers(self, veh: Vehicle) -> list[tuple[Vehicle, str]]:
        h = self.params.horizon
        out = []
        leader = self.leader_of(veh)
        if leader is not None and leader.rear - veh.s <= h:
            out.append((leader, "follow"))
        out.extend((o, "body") for o in self.body_blockers(veh, h))
        if not veh.cleared and veh.arrived_at is not None:
            out.extend((o, "entry") for o in self.entry_blockers(veh))
        return out

    def path_clear(self, veh: Vehicle) -> bool:
        """Nothing but receding vehicles stands in the way of a granted move."""
        if self.body_blockers(veh, self.params.horizon, ignore_receding=True):
            return False
        if veh.s <= self.info[veh.path_id].entry:
            return not self.entry_blockers(veh, fcfs=False, ignore_receding=True)
        return True

    # -- motion bounds -----------------------------------------------------------

    def forward_bound(self, veh: Vehicle, leader: Vehicle | None) -> tuple[float, float]:
        """Hard front-bumper bound for this tick and the speed of what sets it."""
        p = self.params
        bound, speed = math.inf, 0.0
        if leader is not None:
            bound = leader.rear - p.min_gap
            speed = max(leader.v, 0.0)
        pi = self.info[veh.path_id]
        if veh.rear >= pi.exit or veh.s < pi.stop - 40.0:
            return bound, speed
        s = veh.s
        q_done = None
        for other, c in self.conflicting(veh):
            if c.kind == "opposing":
                if q_done == id(c):
                    continue
                span = self.opposing_span(veh.path_id, other, c.offset)
                if span is None or span[1] <= veh.rear:
                    continue
                # the other lane is listed front first, so this is the nearest body;
                # anything farther sits behind it
                q_done = id(c)
                gap = span[0] - s - p.min_gap
                # two vehicles closing on each other in the shared lane split the room
                both_inside = s > pi.entry and not self.receding(other)
                share = 0.5 * gap if both_inside else gap
                b = s + max(0.0, share)
                if b < bound:
                    bound, speed = b, 0.0
            else:
                zone = c.here - p.zone_half
                if self.in_zone(veh, c.here) or s > zone:
                    continue
                if self.in_zone(other, c.there) or self._has_precedence(other, veh, c):
                    if zone < bound:
                        bound, speed = zone, 0.0
        return bound, speed

    def _has_precedence(self, other: Vehicle, veh: Vehicle, c: Conflict) -> bool:
        # a moving vehicle that was let in and is nearer the crossing keeps it
        if not self.occupies(other) or other.state is not ST.CROSSING or other.v < 0.1 or other.rear >= c.there + self.params.zone_half:
            return False
        d_other = c.there - other.s
        d_me = c.here - veh.s
        if d_other < -self.params.zone_half:
            return False
        return (d_other, other.id) < (d_me, veh.id)

    def backward_bound(self, veh: Vehicle, follower: Vehicle | None) -> float:
        p = self.params
        bound = veh.length
        if follower is not None:
            bound = max(bound, follower.s + p.min_gap + veh.length)
        for other, c in self.conflicting(veh):
            if c.kind == "crossing":
                if not self.in_zone(veh, c.here) and veh.rear >= c.here + p.zone_half and self.in_zone(other, c.there):
                    bound = max(bound, c.here + p.zone_half + veh.length)
        return bound

    # -- safety ----------------------------------------------------------------

    def violations(self) -> list[tuple[int, int, str]]:
        """Pairs closer than the collision gap, as ``(id, id, description)``."""
        p = self.params
        out = []
        for lane in self.lanes.values():
            for a, b in zip(lane, lane[1:]):
                if a.rear - b.s < p.collision_gap:
                    out.append((b.id, a.id, f"t={self.t:.2f} {b.id} behind {a.id}: gap {a.rear - b.s:.2f} m"))
        # ``near`` was refreshed this tick and its margin covers one tick of motion
        for pid, pi in self.info.items():
            for veh in self.near[pid]:
                if not self.occupies(veh):
                    continue
                for q, c in pi.conflicts:
                    if q < pid:
                        continue
                    for other in self.near[q]:
                        if c.kind == "opposing":
                            span = self.opposing_span(pid, other, c.offset)
                            if span is None:
                                continue
                            lo, hi = max(pi.entry, veh.rear), min(pi.exit, veh.s)
                            sep = max(span[0] - hi, lo - span[1])
                            if sep < p.collision_gap:
                                out.append((veh.id, other.id, f"t={self.t:.2f} {veh.id} head-on {other.id}: {sep:.2f} m"))
                        elif self.in_zone(veh, c.here, p.zone_core) and self.in_zone(other, c.there, p.zone_core):
                            out.append((veh.id, other.id, f"t={self.t:.2f} {veh.id} crosses {other.id} at the conflict point"))
        return out
