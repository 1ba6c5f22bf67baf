import math

import pytest

from adrive.road import (
    OutOfRangeError,
    Path,
    RoadError,
    UnknownPathError,
    four_way_scene,
    load_scene,
    point_in_polygon,
    scene_from_dict,
    single_track_scene,
)

RECT = ((0, -2), (30, -2), (30, 2), (0, 2))


def test_locate_midpoint_of_straight_path():
    x, y, heading = Path("a", ((0, 0), (100, 0))).locate(50)
    assert (x, y) == (50, 0)
    assert heading == 0.0


def test_locate_start_is_first_waypoint():
    assert Path("a", ((3, 4), (10, 4))).locate(0)[:2] == (3, 4)


def test_locate_on_second_leg_of_l_shape():
    x, y, heading = Path("a", ((0, 0), (10, 0), (10, 10))).locate(15)
    assert (x, y) == pytest.approx((10, 5))
    assert heading == pytest.approx(math.pi / 2)


def test_reverse_direction_flips_travel_order():
    p = Path("a", ((0, 0), (10, 0)), direction="reverse")
    assert p.locate(0)[:2] == (10, 0)


def test_locate_rejects_out_of_range():
    with pytest.raises(OutOfRangeError):
        Path("a", ((0, 0), (1, 0))).locate(1.5)


def test_degenerate_paths_rejected():
    with pytest.raises(RoadError):
        Path("a", ((0, 0),))
    with pytest.raises(RoadError):
        Path("a", ((0, 0), (0, 0)))


@pytest.mark.parametrize("point,inside", [((15, 0), True), ((31, 0), False), ((30, 0), True), ((0, 2), True), ((15, 2.01), False)])
def test_point_in_polygon(point, inside):
    assert point_in_polygon(point, RECT) is inside


def test_evacuation_distance_prefers_nearer_passing_place(straight_scene):
    assert straight_scene([25.0]).distance_to_evacuation("p", 40.0) == 15.0


def test_evacuation_distance_falls_back_to_entrance(straight_scene):
    d, target, is_pp = straight_scene().evacuation_site("p", 40.0)
    assert d == 30.0
    assert target == 8.0  # stop line
    assert not is_pp


def test_evacuation_distance_zero_on_passing_place(straight_scene):
    assert straight_scene([40.0]).distance_to_evacuation("p", 40.0) == 0.0


def test_evacuation_ignores_passing_place_ahead(straight_scene):
    assert straight_scene([45.0]).distance_to_evacuation("p", 40.0) == 30.0


def test_unknown_path():
    with pytest.raises(UnknownPathError):
        single_track_scene(10).path("north")


def test_single_track_geometry():
    scene = single_track_scene(70.0)
    sec = scene.sections["lane"]
    for pid in ("east", "west"):
        assert sec.exits[pid] - sec.entrances[pid] == pytest.approx(70.0, abs=0.05)
        assert sec.entrances[pid] - sec.stop_lines[pid] == pytest.approx(2.0)
    c = scene.conflicts[("east", "west")]
    assert c.kind == "opposing"
    # the east entrance coincides with the west exit
    assert c.offset - sec.entrances["east"] == pytest.approx(sec.exits["west"], abs=0.05)


def test_four_way_straight_paths_cross_or_miss():
    scene = four_way_scene()
    assert scene.conflicts[("north", "east")].kind == "crossing"
    assert scene.conflicts[("north", "south")].kind == "none"


def test_left_turn_crosses_oncoming_straight():
    scene = four_way_scene(left_turn_from="west")
    assert scene.conflicts[("west", "east")].kind == "crossing"


def test_scene_file_round_trip(tmp_path):
    (tmp_path / "scene.yaml").write_text(
        """
name: bridge
paths:
  east: {waypoints: [[-200, 0], [250, 0]], start_s: 20, end_s: 440}
  west: {waypoints: [[-200, 0], [250, 0]], direction: reverse, start_s: 20, end_s: 440, priority: 1}
sections:
  bridge: {region: [[0, -2.5], [50, -2.5], [50, 2.5], [0, 2.5]]}
passing_places:
  - {id: bay, path: east, position: 225, in_section: true}
"""
    )
    scene = load_scene(tmp_path / "scene.yaml")
    sec = scene.sections["bridge"]
    assert sec.entrances["east"] == pytest.approx(200, abs=0.01)
    assert sec.entrances["west"] == pytest.approx(200, abs=0.01)
    assert scene.conflicts[("east", "west")].kind == "opposing"
    assert scene.lane_priority == {"west": 1}
    assert scene.distance_to_evacuation("east", 230) == pytest.approx(5)


def test_unknown_generator():
    with pytest.raises(RoadError):
        scene_from_dict({"generator": {"kind": "roundabout"}})
