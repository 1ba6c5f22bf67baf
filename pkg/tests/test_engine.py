import pytest

from adrive.channel import Beacon, NeighborTable
from adrive.config import ScriptedVehicle, SimConfig
from adrive.cost import CostParams, threshold_wait
from adrive.engine import (
    CaseMode,
    DeadlockCase,
    Decision,
    MissingBeacon,
    Stake,
    lane_priority_decision,
    negotiate_v2v,
    wait_out_threshold,
)
from adrive.perception import MotionClass
from adrive.sim import Simulation
from adrive.vehicle import VehicleKind, VehicleState

ST = VehicleState


def stake(rho, chi, R, delta=0.0):
    return Stake(rho, chi, 0, False, chi, chi, R, delta, 0.0)


def case_of(stakes, detected_at=10.0):
    ids = tuple(sorted(stakes))
    edges = tuple((a, b, "body") for a in ids for b in ids if a != b)
    return DeadlockCase(0, ids, {}, detected_at, edges=edges, stakes=stakes)


def table_for(case, me, t=10.0):
    table = NeighborTable()
    for vid, st in case.stakes.items():
        if vid != me:
            table.put(Beacon(vid, t, 0, 0, 0, 0, ST.IN_DEADLOCK, st.rho, st.chi_comm, st.R, False))
    return table


def decide_all(case, blocks):
    live = {c: True for c in case.contenders}
    return {vid: negotiate_v2v(case, vid, table_for(case, vid), live, blocks) for vid in case.contenders}


def test_costlier_inside_vehicle_stays_and_cheaper_one_backs():
    case = case_of({1: stake(True, 50.0, 0.1), 2: stake(True, 10.0, 0.9)})
    got = decide_all(case, {1: {2}, 2: {1}})
    assert got == {1: Decision.PROCEED, 2: Decision.START_YIELD}


def test_outside_vehicle_yields_to_inside_vehicle_it_blocks():
    case = case_of({1: stake(False, 80.0, 0.9), 2: stake(True, 3.0, 0.1)})
    got = decide_all(case, {1: {2}, 2: {1}})
    assert got == {1: Decision.START_YIELD, 2: Decision.PROCEED}


def test_four_way_tie_highest_draw_goes_first():
    draws = {1: 0.2, 2: 0.7, 3: 0.95, 4: 0.4}
    case = case_of({v: stake(False, 0.0, r) for v, r in draws.items()})
    got = decide_all(case, {v: set() for v in draws})
    assert [v for v, d in got.items() if d is Decision.PROCEED] == [3]
    assert all(d is Decision.HOLD for v, d in got.items() if v != 3)


def test_missing_peer_beacon_raises():
    case = case_of({1: stake(True, 5.0, 0.1), 2: stake(True, 3.0, 0.2)})
    with pytest.raises(MissingBeacon) as info:
        negotiate_v2v(case, 1, NeighborTable(), {1: True, 2: True}, {})
    assert info.value.member == 2


def test_stale_peer_beacon_means_hold():
    case = case_of({1: stake(True, 50.0, 0.1), 2: stake(True, 10.0, 0.2)})
    old = table_for(case, 1, t=9.9)
    assert negotiate_v2v(case, 1, old, {1: True, 2: True}, {1: {2}, 2: {1}}) is Decision.HOLD


def test_departed_peers_are_ignored():
    case = case_of({1: stake(True, 5.0, 0.1), 2: stake(True, 30.0, 0.2)})
    assert negotiate_v2v(case, 1, NeighborTable(), {1: True, 2: False}, {}) is Decision.PROCEED


def test_threshold_order_follows_cost():
    p = CostParams(a=0.1)
    d_a, d_b = threshold_wait(p, 35.0, 0.0), threshold_wait(p, 10.0, 0.0)
    assert (d_a, d_b) == pytest.approx((3.5, 1.0))
    case = case_of({1: stake(True, 35.0, 0.0, d_a), 2: stake(True, 10.0, 0.0, d_b)}, detected_at=0.0)
    stopped = {0: MotionClass.STOPPED}
    assert wait_out_threshold(case, 2, d_b, 1.05, stopped) is Decision.START_YIELD
    assert wait_out_threshold(case, 1, d_a, 1.05, stopped) is Decision.HOLD


def test_equal_cost_lower_draw_backs_first():
    p = CostParams()
    assert threshold_wait(p, 20.0, 0.2) < threshold_wait(p, 20.0, 0.9)


def test_no_second_yielder_when_opponent_already_backs():
    case = case_of({1: stake(True, 35.0, 0.0, 3.5), 2: stake(True, 10.0, 0.0, 1.0)}, detected_at=0.0)
    decision = wait_out_threshold(case, 1, 3.5, 5.0, {2: MotionClass.RECEDING})
    assert decision is not Decision.START_YIELD


def test_lane_priority_rules():
    assert lane_priority_decision(1, {1: 0, 2: 1}, {}) is Decision.START_YIELD
    assert lane_priority_decision(2, {1: 0, 2: 1}, {}) is Decision.PROCEED
    assert lane_priority_decision(5, {5: 0}, {}) is Decision.PROCEED
    # equal rank: lowest id goes, the other backs only if it is in the way
    assert lane_priority_decision(4, {3: 1, 4: 1}, {3: {4}}) is Decision.START_YIELD
    assert lane_priority_decision(4, {3: 1, 4: 1}, {3: set()}) is Decision.HOLD


# -- scripted episodes ----------------------------------------------------------


def lane_sim(vehicles, protocol="adrive", length=40.0, **kw):
    cfg = SimConfig(
        scene={"generator": {"kind": "single_track", "length_m": length}},
        protocol=protocol,
        volume_vph=0,
        duration_s=120,
        scoring_window_s=120,
        vehicles=tuple(vehicles),
        **kw,
    )
    return Simulation(cfg)


def geometry(length=40.0):
    info = lane_sim([], length=length).world.info
    return info["east"], info["west"]


def test_head_on_in_perception_mode_cheaper_vehicle_backs():
    east, west = geometry()
    kind = VehicleKind.NON_CONNECTED
    # east is deep inside (large D); west has just entered
    sim = lane_sim(
        [
            ScriptedVehicle("east", east.entry + 28.0, kind=kind, cleared=True),
            ScriptedVehicle("west", west.entry + 6.0, kind=kind, cleared=True),
        ]
    )
    result = sim.run()
    (case,) = result.cases
    assert case.mode is CaseMode.PERCEPTION
    assert case.stakes[0].chi_perception > case.stakes[1].chi_perception
    assert case.resolution.winner == 0
    assert case.resolution.yielders == [1]
    east_trip, west_trip = sorted(result.trips, key=lambda r: r.vehicle_id)
    backing = case.stakes[1].back_m
    assert backing > 0
    # the winner waits out the loser's threshold, the backing and its own pass
    delta_b = case.stakes[1].delta
    assert result.resolution_times[0] >= delta_b
    assert result.resolution_times[0] <= delta_b + backing / 2.0 + 15.0
    assert west_trip.end_point_t - west_trip.start_point_t > east_trip.end_point_t - east_trip.start_point_t
    assert result.collisions == 0


def test_human_member_raises_flags_quickly():
    east, west = geometry()
    sim = lane_sim(
        [
            ScriptedVehicle("east", east.entry + 15.0, cleared=True),
            ScriptedVehicle("west", west.entry + 15.0, kind=VehicleKind.HUMAN, cleared=True),
        ]
    )
    while not sim.protocol.all_cases:
        sim.tick()
    case = sim.protocol.all_cases[0]
    cav = sim.world.by_id[0]
    for _ in range(4):
        sim.tick()
    assert cav.hv_flag
    assert case.flag_times[0] - case.detected_at <= 0.2 + 1e-9
    assert case.mode is CaseMode.PERCEPTION


def test_all_connected_flags_stay_down():
    east, west = geometry()
    sim = lane_sim([ScriptedVehicle("east", east.entry + 15.0, cleared=True), ScriptedVehicle("west", west.entry + 15.0, cleared=True)])
    result = sim.run()
    (case,) = result.cases
    assert case.mode is CaseMode.V2V
    assert case.flag_times == {}
    assert not any(e["event"] == "hv_flag" for e in result.events)


def test_low_priority_vehicle_near_exit_backs_whole_section():
    east, west = geometry()
    # west is the low-priority side by default
    sim = lane_sim(
        [
            ScriptedVehicle("west", west.exit - 1.0, cleared=True),
            ScriptedVehicle("east", east.entry + 0.5, cleared=True),
        ],
        protocol="lane_priority",
    )
    result = sim.run()
    (case,) = result.cases
    assert case.resolution.yielders == [0]
    assert case.stakes[0].back_m == pytest.approx(west.exit - 1.0 - west.stop)
    assert result.incomplete == 0 and result.collisions == 0


def test_empty_opposing_lane_no_deadlock():
    east, _ = geometry()
    result = lane_sim([ScriptedVehicle("east", east.stop - 30.0, v=10.0)]).run()
    assert result.deadlocks == 0
    assert result.delays[0] == pytest.approx(0.0, abs=0.06)
