"""Vehicle identity, the six-state protocol machine, failure injection and kinematics."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .road import RoadScene

DEFAULT_LENGTH_M = 4.5
MAX_ACCEL = 3.0
STOPPED_SPEED = 0.1


class VehicleKind(enum.Enum):
    CONNECTED = "cav"
    NON_CONNECTED = "automated"
    HUMAN = "human"

    @property
    def connected(self) -> bool:
        return self is VehicleKind.CONNECTED


class VehicleState(enum.IntEnum):
    NOT_AROUND = 0
    APPROACH = 1
    WAIT = 2
    CROSSING = 3
    IN_DEADLOCK = 4
    YIELDING = 5


class Event(enum.Enum):
    ENTER_APPROACH_ZONE = "enter_approach_zone"
    ARRIVE_STOP_LINE = "arrive_stop_line"
    ENTER_SECTION = "enter_section"
    EXIT_SECTION = "exit_section"
    DEADLOCK_DETECTED = "deadlock_detected"
    YIELD_DECIDED = "yield_decided"
    DEADLOCK_RESOLVED = "deadlock_resolved"


S, E = VehicleState, Event

TRANSITIONS: dict[tuple[VehicleState, Event], VehicleState] = {
    (S.NOT_AROUND, E.ENTER_APPROACH_ZONE): S.APPROACH,
    (S.APPROACH, E.ARRIVE_STOP_LINE): S.WAIT,
    (S.WAIT, E.ENTER_SECTION): S.CROSSING,
    (S.APPROACH, E.ENTER_SECTION): S.CROSSING,
    (S.CROSSING, E.EXIT_SECTION): S.NOT_AROUND,
    (S.WAIT, E.DEADLOCK_DETECTED): S.IN_DEADLOCK,
    (S.CROSSING, E.DEADLOCK_DETECTED): S.IN_DEADLOCK,
    (S.IN_DEADLOCK, E.YIELD_DECIDED): S.YIELDING,
    (S.IN_DEADLOCK, E.DEADLOCK_RESOLVED): S.CROSSING,
    # back at the evacuation point the vehicle queues again
    (S.YIELDING, E.ARRIVE_STOP_LINE): S.WAIT,
}

del S, E


class IllegalTransition(Exception):
    def __init__(self, state: VehicleState, event: Event):
        super().__init__(f"no transition from {state.name} on {event.value}")
        self.state = state
        self.event = event


def next_state(state: VehicleState, event: Event) -> VehicleState:
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransition(state, event) from None


@dataclass(frozen=True)
class FailureProfile:
    localization_offset_m: float = 0.0
    overshoot_m: float = 0.0
    packet_loss_override: float | None = None
    # added on top of the taxonomy: a biased clock makes a vehicle believe it
    # reached the stop line later than it did
    clock_skew_s: float = 0.0

    def __post_init__(self):
        if self.overshoot_m < 0:
            raise ValueError("overshoot_m must be >= 0")
        p = self.packet_loss_override
        if p is not None and not 0.0 <= p <= 1.0:
            raise ValueError("packet_loss_override must lie in [0, 1]")

    @property
    def any(self) -> bool:
        return bool(self.localization_offset_m or self.overshoot_m or self.packet_loss_override or self.clock_skew_s)


NO_FAILURE = FailureProfile()


@dataclass(slots=True, eq=False)
class Vehicle:
    id: int
    kind: VehicleKind
    path_id: str
    s: float
    v: float = 0.0
    length: float = DEFAULT_LENGTH_M
    state: VehicleState = VehicleState.NOT_AROUND
    failure: FailureProfile = NO_FAILURE
    # protocol payload, frozen per deadlock episode
    rho: bool = False
    chi: float = 0.0
    R: float = 0.0
    hv_flag: bool = False
    # simulator bookkeeping
    cleared: bool = False
    arrived_at: float | None = None
    stationary_since: float | None = None
    case_id: int | None = None
    yield_target: float | None = None
    cleared_at: float | None = None
    chain_head: int | None = None
    overshoot_spent: bool = False
    trip: object = field(default=None, repr=False)

    def transition(self, event: Event) -> VehicleState:
        self.state = next_state(self.state, event)
        return self.state

    @property
    def rear(self) -> float:
        return self.s - self.length

    @property
    def believed_s(self) -> float:
        return self.s + self.failure.localization_offset_m

    @property
    def stopped(self) -> bool:
        return abs(self.v) < STOPPED_SPEED

    @property
    def connected(self) -> bool:
        return self.kind is VehicleKind.CONNECTED


def transition(vehicle: Vehicle, event: Event) -> VehicleState:
    return vehicle.transition(event)


def believed_localization_state(vehicle: Vehicle, scene: RoadScene) -> bool:
    """The vehicle's own belief that it is inside its critical section."""
    sec = scene.section_of(vehicle.path_id)
    if sec is None:
        return False
    path = scene.path(vehicle.path_id)
    s = min(max(vehicle.believed_s, 0.0), path.length)
    x, y, _ = path.locate(s)
    return sec.contains((x, y))


# -- motion commands --------------------------------------------------------


class Hold(NamedTuple):
    pass


class Proceed(NamedTuple):
    v_target: float
    stop_line: float | None = None
    limit: float = math.inf
    # speed of whatever defines ``limit``, so a moving leader does not force a stop
    limit_speed: float = 0.0


class Recede(NamedTuple):
    v_back: float = 2.0
    stop_at: float = 0.0
    limit: float = -math.inf
    # backing speed of whatever defines ``limit``
    limit_speed: float = 0.0


Command = Hold | Proceed | Recede


class KinematicsError(ValueError):
    pass


def step_kinematics(
    vehicle: Vehicle,
    command: Command,
    dt: float,
    accel: float = MAX_ACCEL,
    path_length: float | None = None,
) -> tuple[float, float]:
    """Advance one tick and return the new ``(s, v)``; the vehicle is not mutated.

    Speed follows the target within +-``accel`` and a braking envelope
    ``sqrt(2 a d)`` toward the nearest bound.  Bounds are hard: position is
    clamped to them, which may imply a harder stop than ``accel`` allows.
    """
    if dt <= 0:
        raise KinematicsError("dt must be positive")
    s, v = vehicle.s, vehicle.v
    if isinstance(command, Proceed):
        bound = command.limit
        want = command.v_target
        if bound - s <= 0.0:
            return s, 0.0
        want = min(want, math.sqrt(2.0 * accel * (bound - s) + command.limit_speed**2))
        if command.stop_line is not None:
            stop = command.stop_line
            if not vehicle.overshoot_spent:
                stop += vehicle.failure.overshoot_m
            if stop - s <= 0.0:
                return s, 0.0
            want = min(want, math.sqrt(2.0 * accel * (stop - s)))
            bound = min(bound, stop)
        v = max(v, 0.0)
        nv = min(want, v + accel * dt) if want > v else want
        ns = s + 0.5 * (v + nv) * dt if nv > v else s + nv * dt
        if ns >= bound:
            ns, nv = bound, 0.0
    elif isinstance(command, Recede):
        bound = max(command.stop_at, command.limit)
        room = s - bound
        if room <= 0.0:
            return s, 0.0
        v = min(v, 0.0)
        envelope = math.sqrt(2.0 * accel * room + command.limit_speed**2) if bound == command.limit else math.sqrt(2.0 * accel * room)
        want = min(command.v_back, envelope)
        nv = -min(want, -v + accel * dt)
        ns = s + nv * dt
        if ns <= bound:
            ns, nv = bound, 0.0
    else:
        return s, 0.0
    if path_length is not None and not 0.0 <= ns <= path_length:
        raise KinematicsError(f"vehicle {vehicle.id} would leave its path (s={ns:.2f})")
    return ns, nv
