import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import ORIGIN, corner_scene, sbr_paths

from mmwave_fusion.fiveg import (C, BaseStation, ChannelObservation, DegenerateGeometry, FixSource,
                                 HeuristicClassifier, IllConditioned, InsufficientPaths, Link, OracleClassifier,
                                 PreconditionError, PropagationModel, ReflectionOrder, SbrLine,
                                 classify_reflection_order, detect_nlos, distance_to_rtt, intersect_lines,
                                 los_fix_2d, los_fix_3d, read_channel_csv, rtt_to_distance, sbr_fix, sbr_line,
                                 sbr_point_for_r, write_channel_csv)
from mmwave_fusion.geo import geodetic_to_enu
from mmwave_fusion.sim.raytrace import trace_paths

BS0 = BaseStation("b0", (0.0, 0.0, 10.0))
MODEL = PropagationModel()


def test_rtt_to_distance():
    assert rtt_to_distance(2.0) == C
    assert rtt_to_distance(2e-6) == pytest.approx(299.792458)
    d = 123.456
    assert rtt_to_distance(distance_to_rtt(d)) == pytest.approx(d, abs=1e-12)


def test_los_fix_3d_north_and_east():
    fix = los_fix_3d(BS0, 100.0, 0.0, 0.0, ORIGIN)
    assert np.allclose(fix.enu, [0.0, 100.0, 10.0], atol=1e-12)
    assert np.allclose(geodetic_to_enu(fix.position, ORIGIN), fix.enu, atol=1e-6)
    assert fix.source is FixSource.LOS
    assert np.allclose(los_fix_3d(BS0, 50.0, np.pi / 2, 0.0, ORIGIN).enu, [50.0, 0.0, 10.0], atol=1e-12)


def test_los_fix_2d_keeps_height():
    fix = los_fix_2d(BS0, 50.0, np.pi / 2, 1.5, ORIGIN)
    assert np.allclose(fix.enu, [50.0, 0.0, 1.5], atol=1e-12)


def test_los_fix_covariance_is_psd():
    fix = los_fix_3d(BS0, 80.0, 0.7, -0.1, ORIGIN, sigmas=(0.15, 1e-3, 1e-3))
    assert np.all(np.linalg.eigvalsh(fix.covariance) > 0)


def test_sbr_line_hand_values():
    ln = sbr_line(BS0, np.pi / 4, np.pi / 4, 10.0)
    assert ln.k == pytest.approx(1.0)
    assert ln.b == pytest.approx(0.0, abs=1e-12)
    assert not ln.swapped


def test_sbr_line_vertical_branch():
    ln = sbr_line(BS0, 0.3, -0.3, 10.0)
    assert ln.swapped
    _, ue = sbr_point_for_r(BS0, 0.3, -0.3, 10.0, 4.0)
    assert ln.distance(ue) < 1e-9


def test_sbr_line_degenerate():
    with pytest.raises(DegenerateGeometry):
        sbr_line(BS0, 0.4, 0.4 + np.pi, 10.0)


@given(st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi), st.floats(10, 500), st.floats(0.01, 0.99))
def test_sbr_point_lies_on_line(alpha, beta, d, frac):
    if abs(np.sin(alpha) + np.sin(beta)) < 1e-3 and abs(np.cos(alpha) + np.cos(beta)) < 1e-3:
        return
    bs = BaseStation("b", (12.0, -7.0, 10.0))
    ln = sbr_line(bs, alpha, beta, d)
    _, ue = sbr_point_for_r(bs, alpha, beta, d, frac * d)
    assert ln.distance(ue) < 1e-9 * max(1.0, d)
    # wrap safety
    ln2 = sbr_line(bs, alpha + 2 * np.pi, beta, d)
    assert ln2.distance(ue) < 1e-9 * max(1.0, d)


def test_sbr_point_limits():
    sc, ue = sbr_point_for_r(BS0, 0.5, 0.5, 20.0, 20.0 - 1e-12)
    assert np.allclose(sc, ue, atol=1e-9)
    sc, ue = sbr_point_for_r(BS0, 0.0, 0.0, 20.0, 10.0)
    assert np.allclose(sc, [0, 10]) and np.allclose(ue, [0, 0])
    with pytest.raises(Exception):
        sbr_point_for_r(BS0, 0.5, 0.5, 20.0, 25.0)


def test_intersect_cross():
    xy, _ = intersect_lines([SbrLine(1.0, 0.0), SbrLine(-1.0, 2.0)])
    assert np.allclose(xy, [1.0, 1.0], atol=1e-15)


def test_intersect_errors():
    with pytest.raises(InsufficientPaths):
        intersect_lines([SbrLine(1.0, 0.0)])
    with pytest.raises(IllConditioned):
        intersect_lines([SbrLine(1.0, 0.0), SbrLine(1.01, 2.0)])


def test_intersect_least_squares():
    lines = [SbrLine(1.0, 0.0), SbrLine(-1.0, 2.0), SbrLine(0.0, 1.0), SbrLine(0.2, 0.8 + 0.05)]
    xy, A = intersect_lines(lines)
    n = [ln.normal_form() for ln in lines]
    c = np.array([cc for _, cc in n])
    ref = np.linalg.lstsq(A, c, rcond=None)[0]
    assert np.allclose(xy, ref)
    assert np.linalg.norm(xy - [1.0, 1.0]) < 0.05


def test_sbr_fix_ray_trace_oracle():
    rng = np.random.default_rng(11)
    done = 0
    for _ in range(60):
        scene, bs, ue = corner_scene(rng)
        paths = sbr_paths(trace_paths(scene, bs, ue, max_bounces=1))
        try:
            fix = sbr_fix(bs, paths, ue[2], scene.origin)
        except (InsufficientPaths, IllConditioned):
            continue
        assert np.allclose(fix.enu[:2], ue[:2], atol=1e-6)
        assert fix.source is FixSource.SBR and fix.n_paths == len(paths)
        done += 1
    assert done >= 30


def test_sbr_fix_covariance_grows_with_noise():
    scene, bs, ue = corner_scene(np.random.default_rng(0))
    paths = sbr_paths(trace_paths(scene, bs, ue, max_bounces=1))
    a = sbr_fix(bs, paths, 1.5, ORIGIN, sigmas=(0.1, 1e-3, 1e-3)).covariance
    b = sbr_fix(bs, paths, 1.5, ORIGIN, sigmas=(0.2, 2e-3, 2e-3)).covariance
    assert np.trace(b[:2, :2]) == pytest.approx(4 * np.trace(a[:2, :2]), rel=1e-6)


def obs(d, rss, bounces=None):
    return ChannelObservation(0.0, "b", 0, float(distance_to_rtt(d)), 0.0, 0.0, 0.0, float(rss), bounces)


def test_detect_nlos():
    d = 150.0
    assert detect_nlos(distance_to_rtt(d), MODEL.rss(d), MODEL) is Link.LOS
    assert detect_nlos(distance_to_rtt(d), MODEL.rss(d, 1), MODEL) is Link.NLOS
    # the comparison is strict: just inside the threshold is LoS, just outside is NLoS
    thr = MODEL.nlos_threshold_db
    assert detect_nlos(distance_to_rtt(d), MODEL.rss(d) - thr + 1e-9, MODEL) is Link.LOS
    assert detect_nlos(distance_to_rtt(d), MODEL.rss(d) - thr - 1e-9, MODEL) is Link.NLOS


def test_classifiers():
    d = 90.0
    single, double = obs(d, MODEL.rss(d, 1), 1), obs(d, MODEL.rss(d, 2), 2)
    heur, oracle = HeuristicClassifier(), OracleClassifier()
    assert heur(single, MODEL) is ReflectionOrder.SBR
    assert heur(double, MODEL) is ReflectionOrder.HIGHER
    assert oracle(single, MODEL) is ReflectionOrder.SBR and oracle(double, MODEL) is ReflectionOrder.HIGHER
    with pytest.raises(PreconditionError):
        oracle(obs(d, MODEL.rss(d, 1)), MODEL)
    with pytest.raises(PreconditionError):
        classify_reflection_order(obs(d, MODEL.rss(d), 0), heur, MODEL)


def test_heuristic_accuracy_on_traced_paths():
    rng = np.random.default_rng(5)
    right = total = 0
    for _ in range(20):
        scene, bs, ue = corner_scene(rng)
        for r in trace_paths(scene, bs, ue, max_bounces=2):
            o = r.observation()
            assert (detect_nlos(o.rtt, o.rss, MODEL) is Link.NLOS) == (r.bounces > 0)
            if r.bounces:
                total += 1
                right += (HeuristicClassifier()(o, MODEL) is ReflectionOrder.SBR) == (r.bounces == 1)
    assert right / total >= 0.95


def test_channel_csv_round_trip(tmp_path):
    recs = [obs(50.0, -80.0, 1), obs(60.0, -85.0)]
    write_channel_csv(tmp_path / "c.csv", recs)
    assert read_channel_csv(tmp_path / "c.csv") == recs
