"""Tick loop, traffic generation and trip metrics."""

from __future__ import annotations

import bisect
import dataclasses
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterator

from .channel import Channel
from .config import SimConfig
from .engine import PROTOCOLS, DeadlockCase, Recovery
from .vehicle import (
    Event,
    Hold,
    KinematicsError,
    Proceed,
    Recede,
    Vehicle,
    VehicleKind,
    step_kinematics,
)
from .world import ST, World

# states a stopped vehicle's leader can be in for the follower to join the approach
INTERSECTION_STATES = (ST.APPROACH, ST.WAIT, ST.CROSSING, ST.IN_DEADLOCK, ST.YIELDING)


class SafetyViolation(RuntimeError):
    def __init__(self, messages: list[str]):
        super().__init__("; ".join(messages))
        self.messages = messages


class IncompleteTrip(ValueError):
    pass


@dataclass
class TripRecord:
    vehicle_id: int
    path: str
    kind: VehicleKind
    spawn_t: float
    start_point_t: float
    free_flow_s: float
    end_point_t: float | None = None

    @property
    def completed(self) -> bool:
        return self.end_point_t is not None

    @property
    def trip_time(self) -> float:
        if self.end_point_t is None:
            raise IncompleteTrip(f"vehicle {self.vehicle_id} has not finished its trip")
        return self.end_point_t - self.start_point_t


def trip_delay(record: TripRecord) -> float:
    """Trip time beyond the constant-speed reference, never negative."""
    return max(0.0, record.trip_time - record.free_flow_s)


def arrival_times(rate_vph: float, rng: random.Random, horizon: float) -> Iterator[float]:
    """Poisson arrival instants in ``[0, horizon)``."""
    if rate_vph <= 0:
        return
    t = 0.0
    lam = rate_vph / 3600.0
    while True:
        t += rng.expovariate(lam)
        if t >= horizon:
            return
        yield t


@dataclass
class RunResult:
    protocol: str
    seed: int
    trips: list[TripRecord]
    scored_from: float
    deadlocks: int
    resolution_times: list[float]
    collisions: int
    violations: list[str]
    cases: list[DeadlockCase]
    stalls: list[tuple[int, int, float, float]]
    unresolved: list[tuple[int, int, float, float]]
    spawned: int
    in_flight: int
    pending: int
    end_t: float
    events: list[dict] = field(default_factory=list, repr=False)

    @property
    def scored(self) -> list[TripRecord]:
        return [r for r in self.trips if r.spawn_t >= self.scored_from - 1e-9]

    @property
    def delays(self) -> list[float]:
        return [trip_delay(r) for r in self.scored if r.completed]

    @property
    def completed(self) -> int:
        return sum(r.completed for r in self.trips)

    @property
    def incomplete(self) -> int:
        return sum(not r.completed for r in self.scored)

    @property
    def average_delay(self) -> float:
        d = self.delays
        return sum(d) / len(d) if d else 0.0

    @property
    def worst_delay(self) -> float:
        return max(self.delays, default=0.0)

    @property
    def mean_resolution(self) -> float:
        r = self.resolution_times
        return sum(r) / len(r) if r else math.nan


class Simulation:
    def __init__(self, config: SimConfig, event_log: IO[str] | None = None, beacon_log: IO[str] | None = None):
        self.config = config
        self.scene = config.build_scene()
        self.world = World(self.scene, config.world)
        chan = dataclasses.replace(config.channel, seed=config.seed * 1_000_003 + config.channel.seed)
        self.channel = Channel(chan, self.scene)
        self.channel.log = beacon_log
        self.event_log = event_log
        cls = PROTOCOLS[config.protocol]
        self.protocol: Recovery = cls(self.world, self.channel, config.cost, config.seed, config.human_patience_s)
        self.trips: list[TripRecord] = []
        self.violations: list[str] = []
        self.bad_pairs: set[tuple[int, int]] = set()
        self._next_id = 0
        self._logged = 0
        self._paths = sorted(self.world.info)
        self._pending: dict[str, deque] = {pid: deque() for pid in self._paths}
        self._script = sorted(enumerate(config.vehicles), key=lambda iv: (iv[1].t, iv[0]))
        self._next_id = len(config.vehicles)
        self._arrivals = self._arrival_stream()
        self._upcoming = next(self._arrivals, None)

    # -- traffic ------------------------------------------------------------------

    def _arrival_stream(self) -> Iterator[tuple[float, str, VehicleKind]]:
        cfg = self.config

        def stream(pid):
            mix = random.Random(f"{cfg.seed}:mix:{pid}")
            for t in arrival_times(cfg.rate_for(pid), random.Random(f"{cfg.seed}:arrivals:{pid}"), cfg.duration_s):
                yield t, pid, self._kind(mix)

        streams = [stream(pid) for pid in self._paths]
        # merged in time order; ties broken by path id
        return heapq.merge(*streams, key=lambda a: (a[0], a[1]))

    def _kind(self, rng: random.Random) -> VehicleKind:
        u = rng.random()
        mix = self.config.mix
        if u < mix.non_connected:
            return VehicleKind.NON_CONNECTED
        if u < mix.non_connected + mix.human:
            return VehicleKind.HUMAN
        return VehicleKind.CONNECTED

    def _place(self, veh: Vehicle):
        lane = self.world.lanes[veh.path_id]
        keys = [-v.s for v in lane]
        i = bisect.bisect_left(keys, -veh.s)
        lane.insert(i, veh)
        self.world.by_id[veh.id] = veh

    def spawn(self):
        w = self.world
        t = w.t
        while self._script and self._script[0][1].t <= t + 1e-9:
            idx, sv = self._script.pop(0)
            veh = Vehicle(idx, sv.kind, sv.path, sv.s, v=sv.v, length=sv.length, failure=sv.failure, cleared=sv.cleared)
            if sv.cleared:
                veh.cleared_at = t - w.params.reaction_s
            pi = w.info[sv.path]
            if pi.entry < veh.s and veh.rear < pi.exit:
                # placed inside the section: it starts out crossing
                veh.state = ST.CROSSING
            veh.trip = TripRecord(idx, sv.path, sv.kind, t, t, max(0.0, pi.end - sv.s) / w.v_cruise)
            self.trips.append(veh.trip)
            self._place(veh)
        while self._upcoming is not None and self._upcoming[0] <= t + 1e-9:
            at, pid, kind = self._upcoming
            self._pending[pid].append((at, self._next_id, kind))
            self._next_id += 1
            self._upcoming = next(self._arrivals, None)
        p = w.params
        for pid in self._paths:
            queue = self._pending[pid]
            if not queue:
                continue
            pi = w.info[pid]
            lane = w.lanes[pid]
            v0 = w.v_cruise
            if lane:
                last = lane[-1]
                gap = last.rear - pi.start
                if last.s <= pi.start or gap < p.min_gap + 1.0:
                    continue
                lead_v = max(last.v, 0.0)
                v0 = min(v0, math.sqrt(lead_v * lead_v + 2.0 * p.accel * (gap - p.min_gap)))
            at, vid, kind = queue.popleft()
            veh = Vehicle(vid, kind, pid, pi.start, v=v0)
            # deferral at the entry point counts toward the trip
            veh.trip = TripRecord(vid, pid, kind, at, at, (pi.end - pi.start) / w.v_cruise)
            self.trips.append(veh.trip)
            lane.append(veh)
            w.by_id[vid] = veh

    # -- per-tick phases ------------------------------------------------------------

    def state_events(self):
        w = self.world
        t = w.t
        radius = self.scene.approach_radius
        for pid in self._paths:
            pi = w.info[pid]
            lane = w.lanes[pid]
            for i, veh in enumerate(lane):
                st = veh.state
                if veh.stopped:
                    if veh.stationary_since is None:
                        veh.stationary_since = t
                else:
                    veh.stationary_since = None
                if st is ST.NOT_AROUND:
                    if veh.s >= pi.entry:
                        continue
                    near = w.stop_point(veh) - veh.s <= radius
                    if not near and veh.stopped and i > 0 and lane[i - 1].state in INTERSECTION_STATES:
                        near = True
                    if near:
                        veh.transition(Event.ENTER_APPROACH_ZONE)
                        st = veh.state
                if st is ST.APPROACH and veh.stopped and not (veh.cleared and veh.believed_s >= pi.entry):
                    veh.transition(Event.ARRIVE_STOP_LINE)
                    st = veh.state
                if st in (ST.APPROACH, ST.WAIT) and veh.cleared and veh.believed_s >= pi.entry:
                    veh.transition(Event.ENTER_SECTION)
                    st = veh.state
                if st is ST.CROSSING and veh.believed_s - veh.length >= pi.exit:
                    veh.transition(Event.EXIT_SECTION)
                    st = veh.state
                if (
                    st is ST.WAIT
                    and veh.arrived_at is None
                    and not veh.cleared
                    and veh.stopped
                    and veh.s >= w.stop_point(veh) - 1.5
                ):
                    veh.arrived_at = t
                    veh.overshoot_spent = True

    def clear_entries(self):
        """Let vehicles committed to the stop line in when nothing conflicts."""
        w = self.world
        p = w.params
        for pid in self._paths:
            pi = w.info[pid]
            lane = w.lanes[pid]
            for i, veh in enumerate(lane):
                if veh.s < pi.stop - 45.0:
                    break
                if veh.cleared or veh.rear >= pi.exit or veh.state not in (ST.NOT_AROUND, ST.APPROACH, ST.WAIT):
                    continue
                if i > 0:
                    lead = lane[i - 1]
                    if not lead.cleared and lead.s < pi.entry:
                        continue
                v = max(veh.v, 0.0)
                d = w.stop_point(veh) - veh.s
                if d > v * v / (2.0 * p.accel) + v * p.dt + 1.0:
                    continue
                if not w.entry_blockers(veh):
                    veh.cleared = True
                    veh.cleared_at = w.t

    def command(self, veh: Vehicle, i: int, lane: list[Vehicle]):
        w = self.world
        p = w.params
        st = veh.state
        if st is ST.IN_DEADLOCK:
            return Hold()
        if st is ST.YIELDING:
            follower = lane[i + 1] if i + 1 < len(lane) else None
            back = w.backward_bound(veh, follower)
            # followers already moved this tick, so their speed is current
            back_v = -min(follower.v, 0.0) if follower is not None else 0.0
            if veh.chain_head is None:
                return Recede(p.v_back, veh.yield_target, back, back_v)
            leader = lane[i - 1] if i > 0 else None
            if leader is not None and leader.state is ST.YIELDING and leader.rear - veh.s < p.min_gap + p.push_gap:
                return Recede(p.v_back, -math.inf, back, back_v)
            return Hold()
        leader = lane[i - 1] if i > 0 else None
        bound, speed = w.forward_bound(veh, leader)
        pi = w.info[veh.path_id]
        stop = None
        # an uncleared vehicle that rolled past its line still believes it is at it
        if not veh.cleared and st is not ST.CROSSING and veh.rear < pi.exit:
            stop = w.stop_point(veh)
        return Proceed(w.v_cruise, stop, bound, speed)

    def move(self):
        w = self.world
        p = w.params
        moves = []
        # receding vehicles first, rear to front, so a queue can open up backward
        for pid in self._paths:
            lane = w.lanes[pid]
            for i in range(len(lane) - 1, -1, -1):
                veh = lane[i]
                if veh.state is ST.YIELDING:
                    self._apply(veh, self.command(veh, i, lane), p)
        cruise = w.v_cruise
        step = cruise * p.dt
        # room a cruising vehicle needs ahead to keep its speed for one more tick
        margin = step + cruise * cruise / (2.0 * p.accel)
        for pid in self._paths:
            lane = w.lanes[pid]
            pi = w.info[pid]
            free_below = pi.stop - 45.0
            leader = None
            for i, veh in enumerate(lane):
                st = veh.state
                prev = veh.s
                moves.append((veh, prev))
                if st is ST.YIELDING:
                    leader = veh
                    continue
                # away from the section a cruising vehicle only follows its leader
                if (
                    veh.v == cruise
                    and (prev < free_below or prev - veh.length >= pi.exit)
                    and st is not ST.IN_DEADLOCK
                    and (leader is None or leader.rear - p.min_gap - prev >= margin)
                ):
                    veh.s = prev + step
                # stopped nose to tail behind a stopped leader: nothing can change this tick
                elif (
                    veh.v == 0.0
                    and leader is not None
                    and leader.v == 0.0
                    and st is not ST.IN_DEADLOCK
                    and leader.rear - p.min_gap - prev <= 0.0
                ):
                    pass
                else:
                    self._apply(veh, self.command(veh, i, lane), p)
                leader = veh
        return moves

    def _apply(self, veh: Vehicle, cmd, p):
        try:
            veh.s, veh.v = step_kinematics(veh, cmd, p.dt, p.accel, self.world.info[veh.path_id].length)
        except KinematicsError as exc:
            raise SafetyViolation([str(exc)]) from None

    def finish_trips(self, moves):
        w = self.world
        for veh, prev in moves:
            end = w.info[veh.path_id].end
            if veh.s < end:
                continue
            frac = (end - prev) / (veh.s - prev) if veh.s > prev else 1.0
            veh.trip.end_point_t = w.t + frac * w.params.dt
            if veh.case_id is not None:
                raise SafetyViolation([f"vehicle {veh.id} left while still in case {veh.case_id}"])
            w.remove(veh)
            self.channel.forget(veh.id)

    def check_safety(self):
        found = self.world.violations()
        if not found:
            return
        fresh = [(a, b, m) for a, b, m in found if (min(a, b), max(a, b)) not in self.bad_pairs]
        for a, b, m in fresh:
            self.bad_pairs.add((min(a, b), max(a, b)))
            self.violations.append(m)
        if fresh and self.config.abort_on_collision:
            raise SafetyViolation([m for _, _, m in fresh])

    def flush_events(self):
        if self.event_log is None:
            return
        ev = self.protocol.events
        for rec in ev[self._logged :]:
            self.event_log.write(json.dumps(rec, sort_keys=True) + "\n")
        self._logged = len(ev)

    def tick(self):
        w = self.world
        self.spawn()
        w.refresh_near()
        self.state_events()
        self.clear_entries()
        if w.tick % self.config.beacon_every == 0:
            self.protocol.detect()
            self.channel.record(w.tick // self.config.beacon_every, w.t, w.all_vehicles())
            self.protocol.after_beacons()
        self.protocol.step()
        moves = self.move()
        self.finish_trips(moves)
        self.check_safety()
        self.flush_events()
        w.tick += 1
        w.t = w.tick * w.params.dt

    def busy(self) -> bool:
        return (
            any(self.world.lanes.values())
            or any(self._pending.values())
            or self._upcoming is not None
            or bool(self._script)
        )

    def run(self) -> RunResult:
        cfg = self.config
        w = self.world
        end = cfg.duration_s
        cap = cfg.duration_s + cfg.drain_cap_s
        n_end = round(end / cfg.dt)
        n_cap = round(cap / cfg.dt)
        while w.tick < n_end or (w.tick < n_cap and self.busy()):
            self.tick()
        return self.result()

    def result(self) -> RunResult:
        cases = self.protocol.all_cases
        return RunResult(
            protocol=self.config.protocol,
            seed=self.config.seed,
            trips=self.trips,
            scored_from=self.config.duration_s - self.config.scoring_window_s,
            deadlocks=len(cases),
            resolution_times=[
                c.resolution.resolved_at - c.detected_at for c in cases if c.resolution.resolved_at is not None
            ],
            collisions=len(self.bad_pairs),
            violations=self.violations,
            cases=cases,
            stalls=list(self.protocol.stalls),
            unresolved=self.protocol.open_stalls() + [
                (c.id, -1, self.world.t - c.detected_at, c.bound_s) for c in self.protocol.cases.values()
            ],
            spawned=len(self.trips),
            in_flight=sum(len(l) for l in self.world.lanes.values()),
            pending=sum(len(q) for q in self._pending.values()),
            end_t=self.world.t,
            events=self.protocol.events,
        )


def run(config: SimConfig, event_log: IO[str] | None = None, beacon_log: IO[str] | None = None) -> RunResult:
    return Simulation(config, event_log, beacon_log).run()
