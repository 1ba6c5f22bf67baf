"""Simulated V2V broadcast: beacon payload, wire codec, lossy delivery, neighbor tables.

Wire layout (little-endian, 66 bytes) is documented in docs/wire_format.md.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple

from .road import RoadScene
from .vehicle import Vehicle, VehicleState

MAGIC = b"AD"
VERSION = 1
FRAME = struct.Struct("<2sBIdddddBBddB")
FRAME_SIZE = FRAME.size

MAX_COORD = 1e6
MAX_SPEED = 100.0
EXPIRY_INTERVALS = 3


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


class Beacon(NamedTuple):
    sender_id: int
    timestamp: float
    x: float
    y: float
    heading: float
    velocity: float
    state: VehicleState
    rho: bool
    chi: float
    R: float
    hv_flag: bool

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y


def encode(b: Beacon) -> bytes:
    floats = (b.timestamp, b.x, b.y, b.heading, b.velocity, b.chi, b.R)
    if not all(math.isfinite(f) for f in floats):
        raise EncodeError("non-finite field")
    if abs(b.x) >= MAX_COORD or abs(b.y) >= MAX_COORD:
        raise EncodeError(f"position ({b.x}, {b.y}) out of range")
    if abs(b.velocity) >= MAX_SPEED:
        raise EncodeError(f"velocity {b.velocity} out of range")
    if b.chi < 0 or not 0.0 <= b.R < 1.0:
        raise EncodeError(f"chi={b.chi} / R={b.R} out of range")
    if not 0 <= b.sender_id < 2**32:
        raise EncodeError(f"sender id {b.sender_id} out of range")
    return FRAME.pack(
        MAGIC, VERSION, b.sender_id, b.timestamp, b.x, b.y, b.heading, b.velocity,
        int(b.state), int(bool(b.rho)), b.chi, b.R, int(bool(b.hv_flag)),
    )


def decode(data: bytes) -> Beacon:
    if len(data) != FRAME_SIZE:
        raise DecodeError(f"expected {FRAME_SIZE} bytes, got {len(data)}")
    magic, version, sender, ts, x, y, hd, vel, state, rho, chi, R, hv = FRAME.unpack(data)
    if magic != MAGIC or version != VERSION:
        raise DecodeError(f"bad header {magic!r} v{version}")
    if rho > 1 or hv > 1:
        raise DecodeError("flag byte must be 0 or 1")
    try:
        st = VehicleState(state)
    except ValueError:
        raise DecodeError(f"unknown state {state}") from None
    return Beacon(sender, ts, x, y, hd, vel, st, bool(rho), chi, R, bool(hv))


# -- loss models ------------------------------------------------------------


@dataclass(frozen=True)
class ChannelParams:
    range_m: float = 400.0
    rate_hz: float = 10.0
    loss_model: str = "bernoulli"
    loss_p: float = 0.0
    ramp_start_m: float = 250.0
    seed: int = 0

    def __post_init__(self):
        if self.range_m <= 0 or self.rate_hz <= 0:
            raise ValueError("range_m and rate_hz must be positive")
        if not 0.0 <= self.loss_p <= 1.0:
            raise ValueError("loss_p must lie in [0, 1]")
        if self.loss_model not in ("bernoulli", "ramp"):
            raise ValueError(f"unknown loss model {self.loss_model!r}")

    @property
    def interval(self) -> float:
        return 1.0 / self.rate_hz

    def loss_probability(self, distance: float) -> float:
        if self.loss_model == "bernoulli":
            return self.loss_p
        if distance <= self.ramp_start_m:
            return 0.0
        frac = (distance - self.ramp_start_m) / (self.range_m - self.ramp_start_m)
        return self.loss_p * min(1.0, frac)


def link_draw(seed: int, tick: int, sender: int, receiver: int) -> float:
    """Uniform [0,1) draw for one directed link at one beacon tick.

    Hash-based so any link can be evaluated lazily and in any order.
    """
    h = hashlib.blake2b(f"{seed}:{tick}:{sender}:{receiver}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") / 2.0**64


# -- channel ----------------------------------------------------------------

# (beacon tick, timestamp, path id, s, v, state, rho, chi, R, hv)
Snapshot = tuple


class Channel:
    """Beacon history for one simulation run.

    Each connected vehicle keeps its last few snapshots; what a receiver
    "heard" is reconstructed on demand from the hash draws, which is
    equivalent to delivering every beacon eagerly but much cheaper.
    """

    def __init__(self, params: ChannelParams, scene: RoadScene):
        self.params = params
        self.scene = scene
        self.history: dict[int, deque] = {}
        self.loss_override: dict[int, float] = {}
        self.tick = -1
        self.log = None
        self._located: dict[tuple[int, int], tuple[float, float, float]] = {}
        self._tables: dict[tuple, NeighborTable] = {}

    def forget(self, vid: int):
        self.history.pop(vid, None)
        self.loss_override.pop(vid, None)
        self._tables.clear()

    def record(self, tick: int, t: float, vehicles: Iterable[Vehicle]):
        self.tick = tick
        self._tables.clear()
        if len(self._located) > 4096:
            oldest = tick - EXPIRY_INTERVALS
            self._located = {k: v for k, v in self._located.items() if k[1] >= oldest}
        for veh in vehicles:
            if not veh.connected:
                continue
            ring = self.history.get(veh.id)
            if ring is None:
                ring = self.history[veh.id] = deque(maxlen=EXPIRY_INTERVALS + 1)
                if veh.failure.packet_loss_override is not None:
                    self.loss_override[veh.id] = veh.failure.packet_loss_override
            snap = (tick, t, veh.path_id, veh.believed_s, veh.v, veh.state, veh.rho, veh.chi, veh.R, veh.hv_flag)
            ring.append(snap)
            if self.log is not None:
                self.log.write(encode(self.beacon(veh.id, snap)).hex() + "\n")

    def _locate(self, sender: int, snap: Snapshot) -> tuple[float, float, float]:
        key = (sender, snap[0])
        pose = self._located.get(key)
        if pose is None:
            path = self.scene.paths[snap[2]]
            pose = self._located[key] = path.locate(min(max(snap[3], 0.0), path.length))
        return pose

    def beacon(self, sender: int, snap: Snapshot) -> Beacon:
        _, t, pid, s, v, state, rho, chi, R, hv = snap
        x, y, hd = self._locate(sender, snap)
        return Beacon(sender, t, x, y, hd, v, state, rho, chi, R, hv)

    def _position(self, vid: int, tick: int):
        for snap in self.history.get(vid, ()):
            if snap[0] == tick:
                return self._locate(vid, snap)[:2]
        return None

    def delivered(self, sender: int, receiver: int, tick: int) -> bool:
        a = self._position(sender, tick)
        b = self._position(receiver, tick)
        if a is None or b is None:
            return False
        d = math.dist(a, b)
        if d > self.params.range_m:
            return False
        p = self.params.loss_probability(d)
        p = max(p, self.loss_override.get(sender, 0.0), self.loss_override.get(receiver, 0.0))
        if p <= 0.0:
            return True
        return link_draw(self.params.seed, tick, sender, receiver) >= p

    def neighbor_table(self, receiver: int, senders: Iterable[int] | None = None) -> "NeighborTable":
        """What ``receiver`` holds right now, optionally only from ``senders``."""
        key = (receiver, None if senders is None else tuple(sorted(senders)))
        cached = self._tables.get(key)
        if cached is not None:
            return cached
        table = self._tables[key] = NeighborTable(self.params.interval)
        if receiver not in self.history:
            return table
        oldest = self.tick - EXPIRY_INTERVALS
        wanted = self.history.items() if senders is None else ((v, self.history[v]) for v in key[1] if v in self.history)
        for sender, ring in wanted:
            if sender == receiver:
                continue
            for snap in reversed(ring):
                if snap[0] < oldest:
                    break
                if self.delivered(sender, receiver, snap[0]):
                    table.put(self.beacon(sender, snap), self.tick - snap[0])
                    break
        return table

    def snapshot_ages(self) -> Mapping[int, int]:
        return {vid: ring[-1][0] for vid, ring in self.history.items() if ring}


def broadcast_step(channel: Channel, vehicles: Iterable[Vehicle], t: float, tick: int | None = None) -> dict[int, set[int]]:
    """Record one beacon round and return ``sender -> receivers`` for it."""
    vehicles = list(vehicles)
    tick = channel.tick + 1 if tick is None else tick
    channel.record(tick, t, vehicles)
    cavs = [v.id for v in vehicles if v.connected]
    out: dict[int, set[int]] = {}
    for s in cavs:
        out[s] = {r for r in cavs if r != s and channel.delivered(s, r, tick)}
    return out


class NeighborTable:
    """Latest non-expired beacon per sender, as heard by one receiver."""

    def __init__(self, interval: float = 0.1):
        self.interval = interval
        self._entries: dict[int, tuple[Beacon, int]] = {}

    def put(self, beacon: Beacon, age_ticks: int = 0):
        old = self._entries.get(beacon.sender_id)
        if old is None or beacon.timestamp >= old[0].timestamp:
            self._entries[beacon.sender_id] = (beacon, age_ticks)

    def get(self, sender: int) -> Beacon | None:
        e = self._entries.get(sender)
        return None if e is None else e[0]

    def age(self, sender: int) -> float:
        return self._entries[sender][1] * self.interval

    def fresh(self, now: float) -> list[Beacon]:
        limit = EXPIRY_INTERVALS * self.interval + 1e-9
        return [b for b, _ in self._entries.values() if now - b.timestamp <= limit]

    def __contains__(self, sender: int) -> bool:
        return sender in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return (b for b, _ in self._entries.values())
