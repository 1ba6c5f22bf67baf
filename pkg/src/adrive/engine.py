"""Deadlock detection on a wait-for graph and the recovery protocols.

Two protocols share the detection machinery:

* :class:`ADrive` negotiates over beacons when every contender is connected
  and falls back to per-vehicle threshold waiting otherwise.
* :class:`LanePriority` always sends the lower-priority lane back.

The engine only changes protocol states and targets; motion commands are
derived from those states by the simulator.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import networkx as nx

from .channel import Channel, NeighborTable
from .cost import (
    Contender,
    CostInputs,
    CostParams,
    priority_order,
    threshold_wait,
    yielding_cost_comm,
    yielding_cost_perception,
)
from .perception import MotionClass, PerceivedVehicle, classify_connected, motion_class
from .vehicle import Event, Vehicle, VehicleKind, believed_localization_state
from .world import ST, World

DEFAULT_HUMAN_PATIENCE_S = 10.0
# lateral tolerance when matching a beacon to a path
SAME_PATH_LATERAL_M = 1.0


class CaseMode(enum.Enum):
    V2V = "v2v"
    PERCEPTION = "perception"
    LANE_PRIORITY = "lane_priority"


class Decision(enum.Enum):
    HOLD = "hold"
    PROCEED = "proceed"
    START_YIELD = "start_yield"


class MissingBeacon(Exception):
    def __init__(self, member: int):
        super().__init__(f"no usable beacon from vehicle {member}")
        self.member = member


@dataclass
class Resolution:
    winner: int | None = None
    yielders: list[int] = field(default_factory=list)
    resolved_at: float | None = None


@dataclass(frozen=True)
class Stake:
    """Values a contender freezes when an episode opens."""

    rho: bool
    d_space: float
    n_followers: int
    follower_present: bool
    chi_comm: float
    chi_perception: float
    R: float
    delta: float
    back_m: float


@dataclass
class DeadlockCase:
    id: int
    contenders: tuple[int, ...]
    chained: dict[int, int]
    detected_at: float
    mode: CaseMode = CaseMode.V2V
    edges: tuple[tuple[int, int, str], ...] = ()
    resolution: Resolution = field(default_factory=Resolution)
    closed_at: float | None = None
    bound_s: float = math.inf
    stakes: dict[int, Stake] = field(default_factory=dict)
    flag_times: dict[int, float] = field(default_factory=dict)

    @property
    def members(self) -> list[int]:
        return sorted(set(self.contenders) | set(self.chained))

    def opponents(self, vid: int) -> set[int]:
        out = set()
        for u, v, _ in self.edges:
            if u == vid and v in self.contenders:
                out.add(v)
            elif v == vid and u in self.contenders:
                out.add(u)
        out.discard(vid)
        return out


# -- detection ----------------------------------------------------------------


def build_wait_graph(world: World, t_wait: float | None = None) -> tuple[nx.DiGraph, dict[int, float]]:
    """Wait-for graph over vehicles waiting at or crossing a section.

    Vehicles already handled by an open case are left out.  Edges leave only
    vehicles that have been stationary for ``t_wait`` seconds.
    """
    t_wait = world.params.wait_detect if t_wait is None else t_wait
    g = nx.DiGraph()
    waits: dict[int, float] = {}
    nodes: dict[int, Vehicle] = {}
    for lane in world.near.values():
        for veh in lane:
            if veh.state in (ST.WAIT, ST.CROSSING) and veh.case_id is None:
                nodes[veh.id] = veh
                waits[veh.id] = 0.0 if veh.stationary_since is None else world.t - veh.stationary_since
                g.add_node(veh.id)
    for vid, veh in nodes.items():
        if waits[vid] < t_wait:
            continue
        for other, kind in world.blockers(veh):
            if other.id in nodes and not g.has_edge(vid, other.id):
                g.add_edge(vid, other.id, kind=kind)
    return g, waits


def detect_deadlocks(
    graph: nx.DiGraph,
    wait_times: Mapping[int, float],
    t_wait: float = 3.0,
    *,
    chain_kinds: Iterable[str] | None = None,
    now: float = 0.0,
    first_id: int = 0,
) -> list[DeadlockCase]:
    """One case per strongly connected component (>= 2 nodes) of long waiters.

    Long waiters that reach a component only through edges of ``chain_kinds``
    (any kind when None) are attached to it as chained members; each is
    assigned the component member it ultimately queues behind.
    """
    if any(w < 0 for w in wait_times.values()):
        raise ValueError("wait times must be non-negative")
    eligible = [n for n in graph if wait_times.get(n, 0.0) >= t_wait]
    sub = graph.subgraph(eligible)
    kinds = None if chain_kinds is None else set(chain_kinds)
    comps = sorted((sorted(c) for c in nx.strongly_connected_components(sub) if len(c) >= 2), key=lambda c: c[0])
    head: dict[int, int] = {}
    comp_of: dict[int, int] = {}
    for i, comp in enumerate(comps):
        for n in comp:
            head[n] = n
            comp_of[n] = i
    # breadth-first over reversed edges, layer by layer
    dist = {n: 0 for n in head}
    frontier = sorted(head)
    chained: dict[int, int] = {}
    d = 0
    while frontier:
        d += 1
        nxt = set()
        for v in frontier:
            for u in sub.predecessors(v):
                if u in dist and dist[u] < d:
                    continue
                if kinds is not None and sub.edges[u, v].get("kind") not in kinds:
                    continue
                nxt.add(u)
                dist[u] = d
        for u in nxt:
            succ = [
                head[w]
                for w in sub.successors(u)
                if dist.get(w) == d - 1 and w in head and (kinds is None or sub.edges[u, w].get("kind") in kinds)
            ]
            head[u] = min(succ, key=lambda h: (comp_of[h], h))
            comp_of[u] = comp_of[head[u]]
            chained[u] = head[u]
        frontier = sorted(nxt)
    cases = []
    for i, comp in enumerate(comps):
        members = set(comp) | {u for u, h in chained.items() if comp_of[u] == i}
        edges = tuple(sorted((u, v, sub.edges[u, v].get("kind", "")) for u, v in sub.edges if u in members and v in members))
        cases.append(
            DeadlockCase(
                id=first_id + i,
                contenders=tuple(comp),
                chained={u: h for u, h in sorted(chained.items()) if comp_of[u] == i},
                detected_at=now,
                edges=edges,
            )
        )
    return cases


# -- per-vehicle protocol rules ------------------------------------------------


def negotiate_v2v(case: DeadlockCase, vid: int, table: NeighborTable, live: Mapping[int, bool], blocks: Mapping[int, set[int]]) -> Decision:
    """Decision of ``vid`` from its own stake and the beacons it holds.

    ``live`` says which contenders are still in deadlock (ground truth the
    vehicle would learn from their beacons); ``blocks[x]`` is the set of
    contenders physically in front of ``x``.
    """
    own = case.stakes[vid]
    ranked = [Contender(vid, own.rho, own.chi_comm, own.R)]
    for m in case.contenders:
        if m == vid or not live.get(m, False):
            continue
        b = table.get(m)
        if b is None:
            raise MissingBeacon(m)
        if b.timestamp < case.detected_at - 1e-9:
            # the peer's frozen payload has not reached us yet
            return Decision.HOLD
        ranked.append(Contender(m, b.rho, b.chi, b.R))
    order = [c.id for c in priority_order(ranked)]
    if order[0] == vid:
        return Decision.PROCEED
    higher = order[: order.index(vid)]
    rho = {c.id: c.rho for c in ranked}
    if not own.rho and any(rho[h] and vid in blocks.get(h, ()) for h in higher):
        return Decision.START_YIELD
    if any(vid in blocks.get(h, ()) for h in higher):
        return Decision.START_YIELD
    return Decision.HOLD


def wait_out_threshold(case: DeadlockCase, vid: int, delta: float, now: float, opponents: Mapping[int, MotionClass]) -> Decision:
    """Perception-only rule: back up once the stand-off outlasts ``delta``.

    Nothing happens while an opponent is already backing; once no opponent
    stands still the vehicle goes.
    """
    if not any(m is MotionClass.STOPPED for m in opponents.values()):
        return Decision.PROCEED
    if now - case.detected_at > delta:
        return Decision.START_YIELD
    return Decision.HOLD


def update_hv_flag(
    vehicle: Vehicle,
    perceived: Iterable[PerceivedVehicle],
    table: NeighborTable,
    now: float,
    scene,
    members: Iterable[int] | None = None,
) -> bool:
    """Whether ``vehicle`` should carry the mixed-traffic flag."""
    if vehicle.hv_flag:
        return True
    members = None if members is None else set(members)
    seen = [p for p in perceived if members is None or p.target_id in members]
    if not all(classify_connected(vehicle, seen, table, now, scene).values()):
        return True
    return any(b.hv_flag for b in table.fresh(now) if members is None or b.sender_id in members)


def lane_priority_decision(vid: int, contenders: Mapping[int, int], blocks: Mapping[int, set[int]]) -> Decision:
    """Lane rank decides everything; ties fall to the lowest id."""
    order = sorted(contenders, key=lambda c: (-contenders[c], c))
    if order[0] == vid:
        return Decision.PROCEED
    if contenders[vid] < contenders[order[0]]:
        return Decision.START_YIELD
    higher = order[: order.index(vid)]
    if any(vid in blocks.get(h, ()) for h in higher):
        return Decision.START_YIELD
    return Decision.HOLD


# -- protocol drivers ----------------------------------------------------------


class Recovery:
    """Shared bookkeeping: case lifecycle, yielding chains, liveness data."""

    name = "base"
    mode = CaseMode.LANE_PRIORITY

    def __init__(
        self,
        world: World,
        channel: Channel | None = None,
        cost: CostParams | None = None,
        seed: int = 0,
        human_patience_s: float = DEFAULT_HUMAN_PATIENCE_S,
    ):
        self.world = world
        self.channel = channel
        self.cost = cost or CostParams()
        self.seed = seed
        self.human_patience_s = human_patience_s
        self.cases: dict[int, DeadlockCase] = {}
        self.closed: list[DeadlockCase] = []
        self.events: list[dict] = []
        self.stalls: list[tuple[int, int, float, float]] = []
        self._next_id = 0
        self._rngs: dict[int, random.Random] = {}
        self._entered: dict[int, float] = {}

    # -- hooks ----------------------------------------------------------------

    def decide(self, case: DeadlockCase, veh: Vehicle, blocks) -> Decision:
        raise NotImplementedError

    def after_beacons(self):
        pass

    # -- logging --------------------------------------------------------------

    def log(self, kind: str, case: DeadlockCase, **data):
        rec = {"t": round(self.world.t, 6), "event": kind, "case": case.id}
        rec.update(data)
        self.events.append(rec)

    # -- detection ------------------------------------------------------------

    def detect(self):
        w = self.world
        graph, waits = build_wait_graph(w)
        if graph.number_of_edges() < 2:
            return
        found = detect_deadlocks(graph, waits, w.params.wait_detect, chain_kinds={"follow"}, now=w.t, first_id=self._next_id)
        for case in found:
            self._next_id = case.id + 1
            self.open(case)

    def draw_R(self, vid: int) -> float:
        rng = self._rngs.get(vid)
        if rng is None:
            rng = self._rngs[vid] = random.Random(f"{self.seed}:veh:{vid}")
        return rng.random()

    def open(self, case: DeadlockCase):
        w = self.world
        self.cases[case.id] = case
        for vid in case.members:
            veh = w.by_id[vid]
            veh.case_id = case.id
            veh.transition(Event.DEADLOCK_DETECTED)
            self._entered[vid] = w.t
            if vid in case.chained:
                veh.chain_head = case.chained[vid]
        for vid in case.contenders:
            case.stakes[vid] = self.stake(w.by_id[vid])
            veh = w.by_id[vid]
            st = case.stakes[vid]
            veh.rho, veh.chi, veh.R = st.rho, st.chi_comm, st.R
        case.mode = self.opening_mode(case)
        case.bound_s = self.bound(case)
        self.log(
            "detected",
            case,
            contenders=list(case.contenders),
            chained={str(k): v for k, v in case.chained.items()},
            mode=case.mode.value,
            bound_s=round(case.bound_s, 6),
        )

    def opening_mode(self, case: DeadlockCase) -> CaseMode:
        return self.mode

    def stake(self, veh: Vehicle) -> Stake:
        w = self.world
        scene = w.scene
        path = scene.paths[veh.path_id]
        believed = min(max(veh.believed_s, 0.0), path.length)
        d_space = scene.distance_to_evacuation(veh.path_id, believed)
        n_f = self.count_followers(veh)
        g = self.follower_present(veh)
        inputs = CostInputs(d_space, n_f, g)
        chi_c = yielding_cost_comm(self.cost, inputs)
        chi_p = yielding_cost_perception(self.cost, inputs)
        R = self.draw_R(veh.id)
        if veh.kind is VehicleKind.HUMAN:
            delta = self.human_patience_s
        else:
            delta = threshold_wait(self.cost, chi_p, R)
        back = max(0.0, veh.s - self.yield_target(veh))
        return Stake(believed_localization_state(veh, scene), d_space, n_f, g, chi_c, chi_p, R, delta, back)

    def count_followers(self, veh: Vehicle) -> int:
        """Same-path vehicles behind ``veh`` that it hears from (N_f)."""
        if not veh.connected or self.channel is None:
            return 0
        path = self.world.scene.paths[veh.path_id]
        me = veh.believed_s
        _, _, hd = path.locate(min(max(me, 0.0), path.length))
        rng = self.channel.params.range_m
        n = 0
        for b in self.channel.neighbor_table(veh.id).fresh(self.world.t):
            s, lateral = path.project(b.position)
            if lateral < SAME_PATH_LATERAL_M and s < me and me - s <= rng and math.cos(b.heading - hd) > 0.0:
                n += 1
        return n

    def follower_present(self, veh: Vehicle) -> bool:
        f = self.world.follower_of(veh)
        return f is not None and self.world.visible(veh, f)

    def yield_target(self, veh: Vehicle) -> float:
        """Where the front bumper must back to: the stop line, or nowhere if outside.

        The believed and the true answers may differ; the safer (farther
        back) of the two is used.
        """
        pi = self.world.info[veh.path_id]
        off = veh.failure.localization_offset_m
        believed = veh.believed_s if veh.believed_s < pi.entry else pi.stop
        true = veh.s if veh.s < pi.entry else pi.stop
        return min(believed - off, true, veh.s)

    def bound(self, case: DeadlockCase) -> float:
        """Longest time any member may stay in deadlock for this case."""
        p = self.world.params
        v = self.world.v_cruise
        deltas = [case.stakes[c].delta for c in case.contenders] if case.mode is CaseMode.PERCEPTION else [0.0]
        back = max((case.stakes[c].back_m / p.v_back + p.v_back / p.accel for c in case.contenders), default=0.0)
        span = max(pi.exit - pi.entry for pi in self.world.info.values())
        lengths = max(self.world.by_id[m].length for m in case.members)
        t_cross = (span + lengths + p.min_gap) / v + v / (2.0 * p.accel)
        return 1.1 * (max(deltas) + back + len(case.contenders) * t_cross)

    # -- per-tick step ----------------------------------------------------------

    def step(self):
        w = self.world
        self.join_yielding_chains()
        for cid in sorted(self.cases):
            case = self.cases[cid]
            active = [c for c in case.contenders if c in w.by_id and w.by_id[c].state is ST.IN_DEADLOCK]
            if not active:
                continue
            blocks = self.physical_blocks(case)
            mode = case.mode
            decisions = {vid: self.decide(case, w.by_id[vid], blocks) for vid in active}
            if case.mode is not mode:
                # no member may act on a decision from the abandoned mode
                decisions = {vid: self.decide(case, w.by_id[vid], blocks) for vid in active}
            for vid in active:
                self.apply(case, w.by_id[vid], decisions[vid])
        self.arrivals()
        self.close_finished()

    def physical_blocks(self, case: DeadlockCase) -> dict[int, set[int]]:
        w = self.world
        h = w.params.horizon
        out: dict[int, set[int]] = {}
        ids = set(case.members)
        for vid in case.members:
            veh = w.by_id.get(vid)
            if veh is None:
                continue
            front = {o.id for o in w.body_blockers(veh, h)}
            # whatever would keep a granted move from starting counts as well
            if veh.s <= w.info[veh.path_id].entry:
                front.update(o.id for o in w.entry_blockers(veh, fcfs=False))
            leader = w.leader_of(veh)
            if leader is not None and leader.rear - veh.s <= h:
                front.add(leader.id)
            # a chained follower blocks whatever its head blocks
            out[vid] = front & ids
        for vid, head in case.chained.items():
            for x, front in out.items():
                if vid in front:
                    front.add(head)
        # in a queue the blocker that matters is the head the queue sits behind
        for x, front in out.items():
            for y in list(front):
                if y in case.chained:
                    front.add(case.chained[y])
        return out

    def released_rival(self, case: DeadlockCase, veh: Vehicle) -> bool:
        # case members see each other's release at once, with no reaction lag
        w = self.world
        for other, _ in w.conflicting(veh):
            if other.id in case.stakes and other.cleared and other.rear < w.info[other.path_id].exit:
                return True
        return False

    def apply(self, case: DeadlockCase, veh: Vehicle, decision: Decision):
        w = self.world
        if decision is Decision.PROCEED:
            if not w.path_clear(veh) or self.released_rival(case, veh):
                return
            self.release(case, veh)
            if case.resolution.winner is None:
                case.resolution.winner = veh.id
            self.log("proceed", case, vehicle=veh.id)
            for m, head in case.chained.items():
                mv = w.by_id.get(m)
                if head == veh.id and mv is not None and mv.state is ST.IN_DEADLOCK:
                    self.release(case, mv)
        elif decision is Decision.START_YIELD:
            self.start_yield(case, veh)
            for m, head in case.chained.items():
                mv = w.by_id.get(m)
                if head == veh.id and mv is not None and mv.state is ST.IN_DEADLOCK:
                    self.start_yield(case, mv, head=veh.id)

    def _left_deadlock(self, veh: Vehicle, case: DeadlockCase):
        t0 = self._entered.pop(veh.id, None)
        if t0 is not None:
            self.stalls.append((case.id, veh.id, self.world.t - t0, case.bound_s))

    def release(self, case: DeadlockCase, veh: Vehicle):
        self._left_deadlock(veh, case)
        veh.transition(Event.DEADLOCK_RESOLVED)
        veh.cleared = True
        # the parties of a deadlock are already watching each other, so the
        # release is noticed without the usual reaction lag
        veh.cleared_at = self.world.t - self.world.params.reaction_s
        veh.chain_head = None

    def start_yield(self, case: DeadlockCase, veh: Vehicle, head: int | None = None):
        w = self.world
        self._left_deadlock(veh, case)
        veh.transition(Event.YIELD_DECIDED)
        veh.cleared = False
        veh.arrived_at = None
        if head is None:
            veh.chain_head = None
            veh.yield_target = self.yield_target(veh)
            case.resolution.yielders.append(veh.id)
            self.log("yield", case, vehicle=veh.id, target=round(veh.yield_target, 6))
        else:
            veh.chain_head = head
        # whoever was cleared to follow it in must queue again
        pi = w.info[veh.path_id]
        lane = w.lanes[veh.path_id]
        for other in lane[lane.index(veh) + 1 :]:
            if other.cleared and other.s <= pi.entry and other.state in (ST.NOT_AROUND, ST.APPROACH, ST.WAIT):
                other.cleared = False

    def join_yielding_chains(self):
        w = self.world
        p = w.params
        for cid in sorted(self.cases):
            case = self.cases[cid]
            for vid in case.members:
                y = w.by_id.get(vid)
                if y is None or y.state is not ST.YIELDING:
                    continue
                head = y.chain_head if y.chain_head is not None else y.id
                f = w.follower_of(y)
                if f is None or f.case_id is not None or y.rear - f.s > p.join_gap or not f.stopped:
                    continue
                if f.state in (ST.WAIT, ST.CROSSING):
                    f.transition(Event.DEADLOCK_DETECTED)
                    f.transition(Event.YIELD_DECIDED)
                    f.case_id = case.id
                    f.chain_head = head
                    f.cleared = False
                    f.arrived_at = None
                    case.chained[f.id] = head
                    self.log("joined", case, vehicle=f.id, head=head)
            for m in list(case.chained):
                mv = w.by_id.get(m)
                if mv is None or mv.state is not ST.IN_DEADLOCK:
                    continue
                leader = w.leader_of(mv)
                if leader is not None and leader.state is ST.YIELDING and leader.case_id == case.id:
                    self.start_yield(case, mv, head=case.chained[m])

    def arrivals(self):
        w = self.world
        for cid in sorted(self.cases):
            case = self.cases[cid]
            for vid in case.members:
                veh = w.by_id.get(vid)
                if veh is None or veh.state is not ST.YIELDING or veh.chain_head is not None:
                    continue
                if veh.s > veh.yield_target + 1e-6:
                    continue
                self.settle(veh)
                self.log("evacuated", case, vehicle=vid)
                for m, head in case.chained.items():
                    mv = w.by_id.get(m)
                    if head == vid and mv is not None and mv.state is ST.YIELDING:
                        self.settle(mv)

    def settle(self, veh: Vehicle):
        veh.transition(Event.ARRIVE_STOP_LINE)
        veh.cleared = False
        veh.arrived_at = None
        veh.overshoot_spent = True
        veh.yield_target = None
        veh.chain_head = None
        veh.case_id = None

    @staticmethod
    def detach(veh: Vehicle):
        veh.case_id = None
        veh.hv_flag = False
        veh.rho, veh.chi, veh.R = False, 0.0, 0.0

    def close_finished(self):
        w = self.world
        for cid in sorted(self.cases):
            case = self.cases[cid]
            win = case.resolution.winner
            if win is not None and case.resolution.resolved_at is None:
                wv = w.by_id.get(win)
                if wv is None or wv.rear >= w.info[wv.path_id].exit:
                    case.resolution.resolved_at = w.t
            for vid in case.members:
                veh = w.by_id.get(vid)
                # a released member that got through has nothing left to do here
                if veh is not None and veh.case_id == cid and veh.state not in (ST.IN_DEADLOCK, ST.YIELDING) and veh.rear >= w.info[veh.path_id].exit:
                    self.detach(veh)
            busy = False
            for vid in case.members:
                veh = w.by_id.get(vid)
                if veh is not None and veh.case_id == cid and veh.state in (ST.IN_DEADLOCK, ST.YIELDING):
                    busy = True
                    break
            if busy:
                continue
            if win is not None and case.resolution.resolved_at is None:
                continue
            if case.resolution.resolved_at is None:
                case.resolution.resolved_at = w.t
            case.closed_at = w.t
            for vid in case.members:
                veh = w.by_id.get(vid)
                if veh is not None and veh.case_id == cid:
                    self.detach(veh)
            self.log(
                "closed",
                case,
                winner=win,
                yielders=case.resolution.yielders,
                resolution_s=round(case.resolution.resolved_at - case.detected_at, 6),
            )
            self.closed.append(self.cases.pop(cid))

    # -- reporting --------------------------------------------------------------

    @property
    def all_cases(self) -> list[DeadlockCase]:
        return sorted(self.closed + list(self.cases.values()), key=lambda c: c.id)

    def open_stalls(self) -> list[tuple[int, int, float, float]]:
        """Vehicles still in deadlock now, with how long they have been."""
        out = []
        for vid, t0 in sorted(self._entered.items()):
            veh = self.world.by_id.get(vid)
            if veh is not None and veh.case_id in self.cases:
                out.append((veh.case_id, vid, self.world.t - t0, self.cases[veh.case_id].bound_s))
        return out


class LanePriority(Recovery):
    name = "lane_priority"
    mode = CaseMode.LANE_PRIORITY

    def decide(self, case, veh, blocks):
        w = self.world
        ranks = {c: w.info[w.by_id[c].path_id].priority for c in case.contenders if c in w.by_id and w.by_id[c].state is ST.IN_DEADLOCK}
        return lane_priority_decision(veh.id, ranks, blocks)


class ADrive(Recovery):
    name = "adrive"
    mode = CaseMode.V2V

    def opening_mode(self, case):
        w = self.world
        if any(not w.by_id[c].connected for c in case.contenders):
            mode = CaseMode.PERCEPTION
        else:
            mode = CaseMode.V2V
        case.mode = mode
        self.refresh_flags(case)
        return case.mode

    def after_beacons(self):
        for cid in sorted(self.cases):
            self.refresh_flags(self.cases[cid])

    def perceive(self, veh: Vehicle, targets: Iterable[int]) -> list[PerceivedVehicle]:
        w = self.world
        ox, oy = w.position(veh)
        out = []
        for t in targets:
            other = w.by_id.get(t)
            if other is None or other is veh or not w.visible(veh, other):
                continue
            x, y = w.position(other)
            out.append(PerceivedVehicle(t, other.path_id, other.s, x - ox, y - oy, other.v, motion_class(other.v)))
        return out

    def refresh_flags(self, case: DeadlockCase):
        w = self.world
        members = case.members
        for vid in members:
            veh = w.by_id.get(vid)
            if veh is None or not veh.connected or veh.case_id != case.id or veh.hv_flag:
                continue
            table = self.channel.neighbor_table(vid, members) if self.channel is not None else NeighborTable()
            if update_hv_flag(veh, self.perceive(veh, case.contenders), table, w.t, w.scene, members):
                veh.hv_flag = True
                case.flag_times[vid] = w.t
                self.log("hv_flag", case, vehicle=vid)
        if case.mode is CaseMode.V2V and any(w.by_id[m].hv_flag for m in members if m in w.by_id and w.by_id[m].connected):
            self.switch_to_perception(case, "hv_flag")

    def switch_to_perception(self, case: DeadlockCase, why: str):
        case.mode = CaseMode.PERCEPTION
        case.bound_s = max(case.bound_s, self.bound(case))
        self.log("mode_switch", case, mode=case.mode.value, reason=why)

    def opponent_motion(self, case: DeadlockCase, veh: Vehicle) -> dict[int, MotionClass]:
        w = self.world
        out = {}
        for o in sorted(case.opponents(veh.id)):
            ov = w.by_id.get(o)
            if ov is None or ov.path_id == veh.path_id or not w.visible(veh, ov):
                continue
            if ov.state is ST.IN_DEADLOCK:
                out[o] = MotionClass.STOPPED
            elif ov.state is ST.YIELDING:
                # a backing vehicle paused by the queue behind it is still backing
                out[o] = MotionClass.RECEDING
        return out

    def decide(self, case, veh, blocks):
        w = self.world
        if case.mode is CaseMode.V2V:
            live = {c: c in w.by_id and w.by_id[c].state is ST.IN_DEADLOCK for c in case.contenders}
            try:
                table = self.channel.neighbor_table(veh.id, case.contenders)
                return negotiate_v2v(case, veh.id, table, live, blocks)
            except MissingBeacon as exc:
                veh.hv_flag = True
                case.flag_times.setdefault(veh.id, w.t)
                self.log("hv_flag", case, vehicle=veh.id, missing=exc.member)
                self.switch_to_perception(case, "missing_beacon")
        st = case.stakes[veh.id]
        return wait_out_threshold(case, veh.id, st.delta, w.t, self.opponent_motion(case, veh))


PROTOCOLS = {"adrive": ADrive, "lane_priority": LanePriority}
