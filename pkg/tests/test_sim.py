import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ORIGIN, box

from mmwave_fusion.fiveg import BaseStation, ChannelObservation, rtt_to_distance
from mmwave_fusion.geo import WGS84, geodetic_to_enu
from mmwave_fusion.ins import NavState, earth_rate_l, mechanize, transport_rate
from mmwave_fusion.sim.downtown import build_downtown, high_outage_route
from mmwave_fusion.sim.noise import ChannelNoise, corrupt_channel
from mmwave_fusion.sim.raytrace import trace_paths
from mmwave_fusion.sim.scene import Building, Scene, SceneError, load_scene, save_scene
from mmwave_fusion.sim.simulate import simulate
from mmwave_fusion.sim.trajectory import (DynamicsProfile, InfeasibleDynamics, generate_trajectory,
                                          place_base_stations, read_truth_csv, write_truth_csv)


def straight(seconds=30.0, speed=10.0):
    prof = DynamicsProfile(cruise_speed=speed, start_dwell=0.0, end_dwell=0.0, accel=100.0, decel=100.0)
    return generate_trajectory([(0.0, 0.0), (0.0, speed * seconds)], prof, origin=ORIGIN, imu_rate=50.0)


def test_straight_segment_imu():
    tr = straight()
    mid = slice(len(tr) // 3, 2 * len(tr) // 3)
    g = WGS84.gravity(tr.states[mid, 0], tr.states[mid, 2])
    # only gravity and the (milli-g) Coriolis term remain at constant velocity
    v = tr.states[mid, 3:6]
    cor = np.cross(2 * earth_rate_l(tr.states[mid, 0]) + transport_rate(v, tr.states[mid, 0], tr.states[mid, 2]), v)
    assert np.allclose(tr.imu.f[mid, :2], cor[:, :2], atol=1e-6)
    assert np.allclose(tr.imu.f[mid, 2], g + cor[:, 2], atol=1e-6)
    # heading north and level: the body frame is the local frame, gyro sees Earth plus transport rate
    w_ie = earth_rate_l(tr.states[mid, 0])
    assert np.allclose(tr.imu.w[mid], w_ie, atol=2e-6)


def test_turn_integrates_quarter_turn():
    prof = DynamicsProfile(cruise_speed=5.0, turn_radius=20.0)
    tr = generate_trajectory([(0, 0), (0, 100), (100, 100)], prof, origin=ORIGIN, imu_rate=50.0)
    assert np.degrees(tr.states[-1, 8] - tr.states[0, 8]) == pytest.approx(90.0, abs=1e-6)
    turned = -np.sum(tr.imu.w[:-1, 2] - earth_rate_l(tr.states[:-1, 0])[:, 2]) / 50.0
    assert np.degrees(turned) == pytest.approx(90.0, abs=0.05)


def test_closed_loop_mechanization():
    wp, prof = high_outage_route()
    tr = generate_trajectory(wp, prof, origin=ORIGIN, imu_rate=20.0)
    assert tr.t[-1] > 240.0
    x = mechanize(NavState.from_vector(tr.states[0], tr.quat[0]), tr.imu)
    err = np.linalg.norm(geodetic_to_enu(x[:, :3], ORIGIN) - tr.enu, axis=1)
    assert err.max() <= 1e-3


def test_kinematic_consistency():
    tr = straight(10.0)
    d = np.diff(tr.enu[:, 1]) * 50.0
    assert np.allclose(d, 0.5 * (tr.states[1:, 4] + tr.states[:-1, 4]), atol=1e-6)


def test_infeasible_dynamics():
    prof = DynamicsProfile(cruise_speed=30.0, turn_radius=5.0, turn_speed=30.0, lateral_accel_cap=2.0)
    with pytest.raises(InfeasibleDynamics):
        generate_trajectory([(0, 0), (0, 100), (100, 100)], prof, origin=ORIGIN)


def test_truth_csv_round_trip(tmp_path):
    tr = straight(2.0)
    write_truth_csv(tmp_path / "t.csv", tr)
    t, s = read_truth_csv(tmp_path / "t.csv")
    assert np.array_equal(t, tr.t) and np.array_equal(s, tr.states)


def test_place_base_stations():
    route = [(0.0, 0.0), (1000.0, 0.0)]
    sites = place_base_stations(route, 250.0)
    assert len(sites) == 5
    a = place_base_stations(route, 250.0, jitter=30.0, seed=4)
    b = place_base_stations(route, 250.0, jitter=30.0, seed=4)
    assert [s.enu for s in a] == [s.enu for s in b]
    assert [s.enu for s in a] != [s.enu for s in place_base_stations(route, 250.0, jitter=30.0, seed=5)]
    scene = Scene(ORIGIN, [box("kerb", 240.0, 2.0, 260.0, 30.0)], [])
    for s in place_base_stations(route, 250.0, scene=scene):
        assert not scene.inside_any(s.xy)


def test_trace_empty_scene():
    bs = BaseStation("b", (0.0, 0.0, 10.0))
    recs = trace_paths(Scene(ORIGIN, [], [bs]), bs, [30.0, 40.0, 1.5])
    assert len(recs) == 1 and recs[0].los
    assert recs[0].length == pytest.approx(np.sqrt(50.0**2 + 8.5**2), abs=1e-12)
    assert rtt_to_distance(recs[0].rtt) == pytest.approx(recs[0].length, rel=1e-15)


def test_trace_single_wall_image():
    bs = BaseStation("b", (0.0, 0.0, 10.0))
    scene = Scene(ORIGIN, [box("w", 20.0, -100.0, 30.0, 100.0)], [bs])
    ue = np.array([5.0, 40.0, 1.5])
    recs = trace_paths(scene, bs, ue, max_bounces=1)
    assert [r.bounces for r in recs] == [0, 1]
    image = np.array([40.0, 0.0])
    assert recs[1].length == pytest.approx(np.hypot(np.linalg.norm(image - ue[:2]), 8.5), abs=1e-9)
    assert recs[1].rss < recs[0].rss


def test_trace_occlusion():
    bs = BaseStation("b", (0.0, 0.0, 10.0))
    scene = Scene(ORIGIN, [box("o", -10.0, 15.0, 10.0, 25.0)], [bs])
    recs = trace_paths(scene, bs, [0.0, 40.0, 1.5])
    assert not any(r.los for r in recs)


def random_room(rng):
    bs = BaseStation("b", (rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(5, 20)))
    walls = [box("e", 40, -200, 60, 200), box("w", -60, -200, -40, 200), box("n", -39, 40, 39, 60)]
    ue = np.array([rng.uniform(-35, 35), rng.uniform(-35, 35), 1.5])
    return Scene(ORIGIN, walls, [bs]), bs, ue


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_specular_reflection_and_lengths(seed):
    scene, bs, ue = random_room(np.random.default_rng(seed))
    d_los = np.linalg.norm(np.r_[ue[:2] - bs.xy, ue[2] - bs.height])
    fac = scene.facades
    for r in trace_paths(scene, bs, ue, max_bounces=2):
        assert r.bounces >= 0
        if r.bounces:
            assert r.length > d_los
        if r.bounces == 1:
            f = fac.ids.index(r.reflectors[0])
            n = fac.normal[f]
            p = np.asarray(r.points[0])
            u_in, u_out = p - bs.xy, ue[:2] - p
            # mirror the incoming direction about the facade; it must match the outgoing one
            mirrored = u_in - 2 * (u_in @ n) * n
            ang = np.arctan2(mirrored[0] * u_out[1] - mirrored[1] * u_out[0], mirrored @ u_out)
            assert abs(ang) < 1e-9


def records_for_noise():
    scene, bs, ue = random_room(np.random.default_rng(0))
    return trace_paths(scene, bs, ue)


def test_corrupt_channel_zero_noise():
    recs = records_for_noise()
    assert corrupt_channel(recs, ChannelNoise.zero(), 1) == [r.observation() for r in recs]


def test_corrupt_channel_sigma():
    obs = ChannelObservation(0.0, "b", 0, 1e-7, 1.0, 0.1, 2.0, -70.0, 1)
    noise = ChannelNoise(0.0, np.radians(1.0), 0.0, 0.0, 0.0)
    out = corrupt_channel([obs] * 100_000, noise, 7)
    sd = np.std([o.aod_az for o in out])
    assert sd == pytest.approx(np.radians(1.0), rel=0.03)


def test_corrupt_channel_seed_replay():
    recs = records_for_noise()
    assert corrupt_channel(recs, ChannelNoise(), 3) == corrupt_channel(recs, ChannelNoise(), 3)
    assert corrupt_channel(recs, ChannelNoise(), 3) != corrupt_channel(recs, ChannelNoise(), 4)
    with pytest.raises(ValueError):
        ChannelNoise(sigma_rss=-1.0)


def test_scene_validation(tmp_path):
    with pytest.raises(SceneError):
        Building("x", [[0, 0], [1, 0]], 10.0)
    with pytest.raises(SceneError):
        Scene(ORIGIN, [Building("bow", [[0, 0], [10, 10], [10, 0], [0, 10]], 5.0)], []).validate()
    with pytest.raises(SceneError):
        Scene(ORIGIN, [box("b", 0, 0, 10, 10)], [BaseStation("s", (5.0, 5.0, 10.0))]).validate()
    scene = Scene(ORIGIN, [box("b", 0, 0, 10, 10)], [BaseStation("s", (15.0, 5.0, 10.0))])
    save_scene(scene, tmp_path / "s.yaml")
    back = load_scene(tmp_path / "s.yaml")
    assert np.allclose(back.buildings[0].footprint, scene.buildings[0].footprint)
    assert back.base_stations == scene.base_stations


def test_downtown_scene():
    scene = build_downtown()
    assert len(scene.buildings) > 100 and len(scene.base_stations) > 20
    scene.validate()


def test_simulate_deterministic():
    tr = straight(5.0)
    bs = BaseStation("b", (10.0, 20.0, 10.0))
    scene = Scene(ORIGIN, [box("w", 20.0, -100.0, 30.0, 200.0)], [bs])
    a = simulate(scene, tr, odo_sigma=0.05, seed=2)
    b = simulate(scene, tr, odo_sigma=0.05, seed=2)
    assert np.array_equal(a.imu.f, b.imu.f) and np.array_equal(a.odometer.speed, b.odometer.speed)
    assert a.channel == b.channel and len(a.channel) == len(a.records) > 0
