from adrive.channel import Beacon, NeighborTable
from adrive.perception import MotionClass, classify_connected, follower_presence, motion_class, sense
from adrive.road import Path, RoadScene
from adrive.vehicle import Vehicle, VehicleKind, VehicleState

from conftest import StaticWorld

ROAD = RoadScene([Path("e", ((0, 0), (500, 0))), Path("w", ((500, 0.5), (0, 0.5)))], [])


def veh(i, path, s, v=0.0, kind=VehicleKind.CONNECTED):
    return Vehicle(i, kind, path, s, v=v)


def test_facing_vehicle_in_range():
    me, other = veh(1, "e", 100), veh(2, "w", 370, v=3.0)  # x = 130
    seen = sense(me, StaticWorld(ROAD, [me, other]))
    assert [p.target_id for p in seen] == [2]
    assert seen[0].motion is MotionClass.ADVANCING
    assert abs(seen[0].distance - 30.0) < 0.01


def test_vehicle_beyond_range_not_seen():
    me, other = veh(1, "e", 100), veh(2, "w", 300)
    assert sense(me, StaticWorld(ROAD, [me, other]), 80.0) == []


def test_backing_vehicle_is_receding():
    assert motion_class(-1.5) is MotionClass.RECEDING
    assert motion_class(0.0) is MotionClass.STOPPED
    assert motion_class(2.0) is MotionClass.ADVANCING


def _beacon(sender, x, t, y=0.5):
    return Beacon(sender, t, x, y, 3.14159, 0.0, VehicleState.WAIT, False, 0.0, 0.0, False)


def test_association():
    me, other = veh(1, "e", 100), veh(2, "w", 370)
    perceived = sense(me, StaticWorld(ROAD, [me, other]))
    table = NeighborTable()
    assert classify_connected(me, perceived, table, 1.0, ROAD) == {2: False}
    table.put(_beacon(2, 130.5, 0.95))
    assert classify_connected(me, perceived, table, 1.0, ROAD) == {2: True}
    # beacons that stopped 0.5 s ago have expired
    assert classify_connected(me, perceived, table, 1.45, ROAD) == {2: False}
    # a beacon from elsewhere does not match
    far = NeighborTable()
    far.put(_beacon(2, 140.0, 0.95))
    assert classify_connected(me, perceived, far, 1.0, ROAD) == {2: False}


def test_follower_presence():
    me = veh(1, "e", 100)
    assert follower_presence(me, StaticWorld(ROAD, [me, veh(2, "e", 80)]))
    assert not follower_presence(me, StaticWorld(ROAD, [me]))
    assert not follower_presence(me, StaticWorld(ROAD, [me, veh(2, "e", 0)]), 80.0)
    # the car in front is not a follower
    assert not follower_presence(me, StaticWorld(ROAD, [me, veh(2, "e", 120)]))
