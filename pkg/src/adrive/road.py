"""Static road geometry: paths, critical sections, stop lines and passing places.

Everything here is immutable once a :class:`RoadScene` is built, so a scene
can be shared between simulation runs.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Iterable, Mapping, Sequence

import yaml

Point = tuple[float, float]

STOP_LINE_SETBACK_M = 2.0


class RoadError(ValueError):
    pass


class UnknownPathError(RoadError, KeyError):
    pass


class UnknownSectionError(RoadError, KeyError):
    pass


class OutOfRangeError(RoadError):
    pass


@dataclass(frozen=True)
class Path:
    """Piecewise-linear path, arc-length parameterized in travel order."""

    id: str
    waypoints: tuple[Point, ...]
    direction: str = "forward"
    _cum: tuple[float, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.waypoints)
        if self.direction not in ("forward", "reverse"):
            raise RoadError(f"path {self.id}: direction must be 'forward' or 'reverse'")
        if self.direction == "reverse":
            pts = pts[::-1]
        if len(pts) < 2:
            raise RoadError(f"path {self.id}: needs at least 2 waypoints")
        cum = [0.0]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            seg = math.hypot(x1 - x0, y1 - y0)
            if seg <= 0.0:
                raise RoadError(f"path {self.id}: consecutive waypoints must differ")
            cum.append(cum[-1] + seg)
        object.__setattr__(self, "waypoints", pts)
        object.__setattr__(self, "_cum", tuple(cum))

    @property
    def length(self) -> float:
        return self._cum[-1]

    def locate(self, s: float) -> tuple[float, float, float]:
        """Return ``(x, y, heading)`` at arc-length ``s``."""
        if not (0.0 <= s <= self.length):
            raise OutOfRangeError(f"path {self.id}: s={s} outside [0, {self.length}]")
        i = min(bisect_right(self._cum, s) - 1, len(self._cum) - 2)
        (x0, y0), (x1, y1) = self.waypoints[i], self.waypoints[i + 1]
        seg = self._cum[i + 1] - self._cum[i]
        f = (s - self._cum[i]) / seg
        return x0 + f * (x1 - x0), y0 + f * (y1 - y0), math.atan2(y1 - y0, x1 - x0)

    def project(self, point: Point) -> tuple[float, float]:
        """Nearest arc-length to ``point`` and the lateral distance to it."""
        px, py = point
        best_s, best_d = 0.0, math.inf
        for i, ((x0, y0), (x1, y1)) in enumerate(zip(self.waypoints, self.waypoints[1:])):
            dx, dy = x1 - x0, y1 - y0
            seg2 = dx * dx + dy * dy
            f = max(0.0, min(1.0, ((px - x0) * dx + (py - y0) * dy) / seg2))
            d = math.hypot(x0 + f * dx - px, y0 + f * dy - py)
            if d < best_d:
                best_d = d
                best_s = self._cum[i] + f * math.sqrt(seg2)
        return best_s, best_d


def point_in_polygon(point: Point, polygon: Sequence[Point], tol: float = 1e-9) -> bool:
    """Even-odd containment; points on an edge count as inside."""
    px, py = point
    n = len(polygon)
    for i in range(n):
        (x0, y0), (x1, y1) = polygon[i], polygon[(i + 1) % n]
        dx, dy = x1 - x0, y1 - y0
        cross = (px - x0) * dy - (py - y0) * dx
        if abs(cross) <= tol * max(1.0, math.hypot(dx, dy)):
            if min(x0, x1) - tol <= px <= max(x0, x1) + tol and min(y0, y1) - tol <= py <= max(y0, y1) + tol:
                return True
    inside = False
    for i in range(n):
        (x0, y0), (x1, y1) = polygon[i], polygon[(i + 1) % n]
        if (y0 > py) != (y1 > py):
            xc = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
            if px < xc:
                inside = not inside
    return inside


@dataclass(frozen=True)
class CriticalSection:
    id: str
    region: tuple[Point, ...]
    entrances: Mapping[str, float]
    exits: Mapping[str, float]
    stop_lines: Mapping[str, float]
    length_m: float

    def __post_init__(self):
        if len(self.region) < 3:
            raise RoadError(f"section {self.id}: region needs at least 3 vertices")
        if self.length_m <= 0:
            raise RoadError(f"section {self.id}: length_m must be positive")
        for pid, entry in self.entrances.items():
            if not entry < self.exits[pid]:
                raise RoadError(f"section {self.id}: entrance must precede exit on {pid}")
            if self.stop_lines[pid] > entry:
                raise RoadError(f"section {self.id}: stop line after entrance on {pid}")

    def contains(self, point: Point) -> bool:
        return point_in_polygon(point, self.region)


@dataclass(frozen=True)
class PassingPlace:
    id: str
    path_id: str
    position: float
    in_section: bool = False


@dataclass(frozen=True)
class Conflict:
    """How two paths interact inside a shared section.

    ``opposing``: the paths run along the same line in opposite senses;
    a point at ``s_other`` on the other path sits at ``offset - s_other``
    on this one.  ``crossing``: the paths cross once at ``here``/``there``.
    ``none``: the paths share the section without touching.
    """

    kind: str
    offset: float = 0.0
    here: float = 0.0
    there: float = 0.0


@dataclass(frozen=True)
class TripPoints:
    start: float
    end: float


class RoadScene:
    """Paths plus the critical sections they share."""

    def __init__(
        self,
        paths: Iterable[Path],
        sections: Iterable[CriticalSection],
        passing_places: Iterable[PassingPlace] = (),
        *,
        lane_priority: Mapping[str, int] | None = None,
        trip_points: Mapping[str, TripPoints] | None = None,
        speed_limit: float = 10.0,
        approach_radius: float = 30.0,
        name: str = "scene",
    ):
        self.name = name
        self.paths = {p.id: p for p in paths}
        self.sections = {c.id: c for c in sections}
        self.passing_places = tuple(passing_places)
        self.speed_limit = float(speed_limit)
        self.approach_radius = float(approach_radius)
        self.lane_priority = dict(lane_priority or {})
        self.trip_points = dict(trip_points or {})

        self._section_of: dict[str, CriticalSection] = {}
        for sec in self.sections.values():
            for pid in sec.entrances:
                if pid not in self.paths:
                    raise UnknownPathError(pid)
                if pid in self._section_of:
                    raise RoadError(f"path {pid} crosses more than one critical section")
                self._section_of[pid] = sec
        for pp in self.passing_places:
            if pp.path_id not in self.paths:
                raise UnknownPathError(pp.path_id)
            sec = self._section_of.get(pp.path_id)
            if sec is not None and not pp.in_section:
                if sec.entrances[pp.path_id] < pp.position < sec.exits[pp.path_id]:
                    raise RoadError(f"passing place {pp.id} lies inside {sec.id} but is not flagged in_section")
        for pid, tp in self.trip_points.items():
            if not 0 <= tp.start < tp.end <= self.paths[pid].length:
                raise RoadError(f"path {pid}: bad trip points {tp}")
        self._pp_by_path: dict[str, tuple[float, ...]] = {}
        for pp in self.passing_places:
            self._pp_by_path.setdefault(pp.path_id, ())
            self._pp_by_path[pp.path_id] += (pp.position,)
        self.conflicts: dict[tuple[str, str], Conflict] = {}
        for sec in self.sections.values():
            ids = sorted(sec.entrances)
            for a in ids:
                for b in ids:
                    if a != b:
                        self.conflicts[(a, b)] = self._classify(sec, a, b)

    # -- lookups -------------------------------------------------------------

    def path(self, path_id: str) -> Path:
        try:
            return self.paths[path_id]
        except KeyError:
            raise UnknownPathError(path_id) from None

    def section(self, section_id: str) -> CriticalSection:
        try:
            return self.sections[section_id]
        except KeyError:
            raise UnknownSectionError(section_id) from None

    def shared_interval(self, path_id: str) -> tuple[float, float]:
        sec = self._section_of[path_id]
        return sec.entrances[path_id], sec.exits[path_id]

    def section_of(self, path_id: str) -> CriticalSection | None:
        self.path(path_id)
        return self._section_of.get(path_id)

    def passing_places_on(self, path_id: str) -> tuple[float, ...]:
        return self._pp_by_path.get(path_id, ())

    # -- queries -------------------------------------------------------------

    def locate(self, path_id: str, s: float) -> tuple[float, float, float]:
        return self.path(path_id).locate(s)

    def in_section(self, section_id: str, point: Point) -> bool:
        return self.section(section_id).contains(point)

    def distance_to_evacuation(self, path_id: str, s: float) -> float:
        """Backward distance to the nearest evacuation site (D_SPACE)."""
        return self.evacuation_site(path_id, s)[0]

    def evacuation_site(self, path_id: str, s: float) -> tuple[float, float, bool]:
        """``(D_SPACE, target_s, is_passing_place)`` for a vehicle front at ``s``.

        A vehicle that has not passed its entrance is already evacuated; the
        motion target for backing out of the section is the stop line.
        """
        path = self.path(path_id)
        if not 0.0 <= s <= path.length:
            raise OutOfRangeError(f"path {path_id}: s={s} outside [0, {path.length}]")
        sec = self._section_of.get(path_id)
        if sec is None:
            raise RoadError(f"path {path_id} does not cross a critical section")
        entry = sec.entrances[path_id]
        best = (0.0, s, False) if s < entry else (s - entry, sec.stop_lines[path_id], False)
        for pos in self.passing_places_on(path_id):
            if pos <= s and s - pos < best[0]:
                best = (s - pos, pos, True)
        return best

    # -- conflict classification --------------------------------------------

    def _classify(self, sec: CriticalSection, a: str, b: str) -> Conflict:
        pa, pb = self.paths[a], self.paths[b]
        ea, xa = sec.entrances[a], sec.exits[a]
        eb, xb = sec.entrances[b], sec.exits[b]
        offset = ea + xb
        colinear = True
        n = max(2, int((xa - ea) / 0.5))
        for k in range(n + 1):
            s = ea + (xa - ea) * k / n
            x, y, _ = pa.locate(s)
            sb = offset - s
            if not (0 <= sb <= pb.length):
                colinear = False
                break
            xb_, yb_, _ = pb.locate(sb)
            if math.hypot(x - xb_, y - yb_) > 0.25:
                colinear = False
                break
        if colinear:
            return Conflict("opposing", offset=offset)
        hit = _first_crossing(pa, pb, ea, xa, eb, xb)
        if hit is not None:
            return Conflict("crossing", here=hit[0], there=hit[1])
        return Conflict("none")


def _first_crossing(pa: Path, pb: Path, ea, xa, eb, xb):
    best = None
    for i in range(len(pa.waypoints) - 1):
        a0, a1 = pa.waypoints[i], pa.waypoints[i + 1]
        for j in range(len(pb.waypoints) - 1):
            b0, b1 = pb.waypoints[j], pb.waypoints[j + 1]
            r = _segment_intersection(a0, a1, b0, b1)
            if r is None:
                continue
            ta, tb = r
            sa = pa._cum[i] + ta * (pa._cum[i + 1] - pa._cum[i])
            sb = pb._cum[j] + tb * (pb._cum[j + 1] - pb._cum[j])
            if ea <= sa <= xa and eb <= sb <= xb and (best is None or sa < best[0]):
                best = (sa, sb)
    return best


def _segment_intersection(p0, p1, q0, q1):
    rx, ry = p1[0] - p0[0], p1[1] - p0[1]
    sx, sy = q1[0] - q0[0], q1[1] - q0[1]
    den = rx * sy - ry * sx
    if abs(den) < 1e-12:
        return None
    qpx, qpy = q0[0] - p0[0], q0[1] - p0[1]
    t = (qpx * sy - qpy * sx) / den
    u = (qpx * ry - qpy * rx) / den
    if 0 <= t <= 1 and 0 <= u <= 1:
        return t, u
    return None


# -- construction helpers ---------------------------------------------------


def _boundary_crossings(path: Path, region: Sequence[Point], step: float = 0.25):
    """First entry and last exit arc-lengths of ``path`` through ``region``."""
    inside_at = lambda s: point_in_polygon(path.locate(s)[:2], region)  # noqa: E731
    n = int(path.length / step)
    samples = [min(path.length, k * step) for k in range(n + 1)] + [path.length]
    flags = [inside_at(s) for s in samples]
    if not any(flags):
        return None
    first = flags.index(True)
    last = len(flags) - 1 - flags[::-1].index(True)

    def refine(lo, hi, want_inside_hi):
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if inside_at(mid) == want_inside_hi:
                hi = mid
            else:
                lo = mid
        return hi

    entry = samples[first] if first == 0 else refine(samples[first - 1], samples[first], True)
    exit_ = samples[last] if last == len(samples) - 1 else refine(samples[last + 1], samples[last], True)
    return entry, exit_


def make_section(
    section_id: str,
    region: Sequence[Point],
    paths: Iterable[Path],
    stop_lines: Mapping[str, float] | None = None,
    setback: float = STOP_LINE_SETBACK_M,
) -> CriticalSection:
    """Build a section, locating each path's entrance/exit from the polygon."""
    region = tuple((float(x), float(y)) for x, y in region)
    entrances, exits, lines = {}, {}, {}
    for p in paths:
        hit = _boundary_crossings(p, region)
        if hit is None:
            continue
        entrances[p.id], exits[p.id] = hit
        lines[p.id] = (stop_lines or {}).get(p.id, max(0.0, hit[0] - setback))
    if not entrances:
        raise RoadError(f"section {section_id}: no path crosses the region")
    length = max(exits[k] - entrances[k] for k in entrances)
    return CriticalSection(section_id, region, entrances, exits, lines, length)


def single_track_scene(
    length_m: float = 100.0,
    *,
    approach_m: float = 150.0,
    buffer_m: float = 120.0,
    after_m: float = 30.0,
    lane_offset: float = 2.0,
    taper_m: float = 6.0,
    passing_places: Sequence[tuple[str, float]] = (),
    speed_limit: float = 10.0,
    approach_radius: float = 30.0,
    priority: str = "east",
) -> RoadScene:
    """Two-way road narrowed to one lane over ``length_m`` meters.

    Eastbound drives at y=-lane_offset and westbound at y=+lane_offset; both
    merge onto y=0 through the shared stretch x in [0, length_m].  Trips are
    measured from ``buffer_m`` (spawn point) to ``after_m`` past the exit; the
    buffer leaves room for queues to back up behind the spawn point.
    """
    L = float(length_m)
    up = buffer_m + approach_m + STOP_LINE_SETBACK_M
    down = after_m + 10.0
    east = Path(
        "east",
        (
            (-up, -lane_offset),
            (-taper_m, -lane_offset),
            (0.0, 0.0),
            (L, 0.0),
            (L + taper_m, -lane_offset),
            (L + taper_m + down, -lane_offset),
        ),
    )
    west = Path(
        "west",
        (
            (L + up, lane_offset),
            (L + taper_m, lane_offset),
            (L, 0.0),
            (0.0, 0.0),
            (-taper_m, lane_offset),
            (-taper_m - down, lane_offset),
        ),
    )
    region = ((0.0, -2.5), (L, -2.5), (L, 2.5), (0.0, 2.5))
    sec = make_section("lane", region, (east, west))
    trips = {
        pid: TripPoints(buffer_m, sec.exits[pid] + after_m) for pid in ("east", "west")
    }
    pps = [PassingPlace(f"pp{i}", pid, sec.entrances[pid] + pos, in_section=True) for i, (pid, pos) in enumerate(passing_places)]
    other = "west" if priority == "east" else "east"
    return RoadScene(
        (east, west),
        (sec,),
        pps,
        lane_priority={priority: 1, other: 0},
        trip_points=trips,
        speed_limit=speed_limit,
        approach_radius=approach_radius,
        name=f"single-track-{L:g}m",
    )


def four_way_scene(
    half_width: float = 5.0,
    *,
    arm_m: float = 150.0,
    lane_offset: float = 1.5,
    speed_limit: float = 10.0,
    left_turn_from: str | None = None,
) -> RoadScene:
    """Four-way intersection with one straight path per approach.

    ``left_turn_from`` replaces that approach's straight path with a left turn.
    """
    w = float(half_width)
    far = w + arm_m
    straight = {
        "north": ((lane_offset, -far), (lane_offset, far)),
        "south": ((-lane_offset, far), (-lane_offset, -far)),
        "east": ((-far, -lane_offset), (far, -lane_offset)),
        "west": ((far, lane_offset), (-far, lane_offset)),
    }
    # left turns keep right-hand traffic: heading -> lane of the new heading
    turns = {
        "west": ((far, lane_offset), (lane_offset + 0.5, lane_offset), (-lane_offset, -lane_offset - 0.5), (-lane_offset, -far)),
        "east": ((-far, -lane_offset), (-lane_offset - 0.5, -lane_offset), (lane_offset, lane_offset + 0.5), (lane_offset, far)),
        "north": ((lane_offset, -far), (lane_offset, -lane_offset - 0.5), (-lane_offset - 0.5, lane_offset), (-far, lane_offset)),
        "south": ((-lane_offset, far), (-lane_offset, lane_offset + 0.5), (lane_offset + 0.5, -lane_offset), (far, -lane_offset)),
    }
    paths = []
    for pid, pts in straight.items():
        if pid == left_turn_from:
            paths.append(Path(pid, turns[pid]))
        else:
            paths.append(Path(pid, pts))
    region = ((-w, -w), (w, -w), (w, w), (-w, w))
    sec = make_section("box", region, paths)
    trips = {p.id: TripPoints(20.0, sec.exits[p.id] + 20.0) for p in paths}
    prio = {"east": 1, "west": 1, "north": 0, "south": 0}
    return RoadScene(paths, (sec,), lane_priority=prio, trip_points=trips, speed_limit=speed_limit, name="four-way")


# -- scene files ------------------------------------------------------------


def scene_from_dict(doc: Mapping) -> RoadScene:
    """Build a scene from the structure documented in docs/config.md."""
    if "generator" in doc:
        gen = dict(doc["generator"])
        kind = gen.pop("kind")
        if kind == "single_track":
            pps = [tuple(x) for x in gen.pop("passing_places", [])]
            return single_track_scene(passing_places=pps, **gen)
        if kind == "four_way":
            return four_way_scene(**gen)
        raise RoadError(f"unknown scene generator {kind!r}")

    paths = []
    trips = {}
    priority = {}
    for pid, desc in (doc.get("paths") or {}).items():
        p = Path(str(pid), tuple(tuple(w) for w in desc["waypoints"]), desc.get("direction", "forward"))
        paths.append(p)
        if "start_s" in desc and "end_s" in desc:
            trips[p.id] = TripPoints(float(desc["start_s"]), float(desc["end_s"]))
        if "priority" in desc:
            priority[p.id] = int(desc["priority"])
    if not paths:
        raise RoadError("scene declares no paths")
    sections = []
    for sid, desc in (doc.get("sections") or {}).items():
        sections.append(make_section(str(sid), [tuple(v) for v in desc["region"]], paths, desc.get("stop_lines")))
    pps = [
        PassingPlace(str(pp["id"]), str(pp["path"]), float(pp["position"]), bool(pp.get("in_section", False)))
        for pp in doc.get("passing_places") or []
    ]
    return RoadScene(
        paths,
        sections,
        pps,
        lane_priority=priority,
        trip_points=trips,
        speed_limit=float(doc.get("speed_limit_mps", 10.0)),
        approach_radius=float(doc.get("approach_radius_m", 30.0)),
        name=str(doc.get("name", "scene")),
    )


def load_scene(path: str | FsPath) -> RoadScene:
    with open(path) as fh:
        return scene_from_dict(yaml.safe_load(fh))
