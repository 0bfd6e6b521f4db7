import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmwave_fusion.geo import (WGS84, GimbalProximity, ZeroQuaternion, attitude_from_rotation, curvature_radii,
                               enu_to_geodetic, geodetic_to_enu, normalize_quaternion, propagate_quaternion,
                               quaternion_from_rotation, rotation_from_attitude, rotation_from_quaternion, skew,
                               wrap_2pi, wrap_pi)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
pitches = st.floats(-1.5, 1.5, allow_nan=False)


def test_curvature_radii_equator():
    r_n, r_m = curvature_radii(0.0)
    assert r_n == pytest.approx(6378137.0, abs=1e-6)
    assert r_m == pytest.approx(6335439.327, abs=1e-3)


def test_curvature_radii_equal_at_pole():
    r_n, r_m = curvature_radii(np.pi / 2)
    assert r_n == pytest.approx(r_m, rel=1e-12)


def test_rotation_identity():
    assert np.allclose(rotation_from_attitude([0.0, 0.0, 0.0]), np.eye(3), atol=1e-15)


def test_rotation_azimuth_east():
    R = rotation_from_attitude([0.0, 0.0, np.pi / 2])
    assert R[0, 1] == pytest.approx(1.0)
    assert R[1, 0] == pytest.approx(-1.0)
    # body forward (y) points east
    assert np.allclose(R @ [0, 1, 0], [1, 0, 0], atol=1e-15)


@given(pitches, angles, angles)
def test_rotation_orthonormal(p, r, a):
    R = rotation_from_attitude([p, r, a])
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(pitches, angles, angles)
def test_attitude_round_trip(p, r, a):
    att = attitude_from_rotation(rotation_from_attitude([p, r, a]))
    assert att[0] == pytest.approx(p, abs=1e-9)
    assert wrap_pi(att[1] - r) == pytest.approx(0.0, abs=1e-9)
    assert wrap_pi(att[2] - a) == pytest.approx(0.0, abs=1e-9)
    assert 0.0 <= att[2] < 2 * np.pi


def test_gimbal_proximity():
    with pytest.raises(GimbalProximity):
        attitude_from_rotation(rotation_from_attitude([np.pi / 2, 0.0, 0.3]))


@given(pitches, angles, angles)
def test_quaternion_round_trip(p, r, a):
    R = rotation_from_attitude([p, r, a])
    q = quaternion_from_rotation(R)
    assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(rotation_from_quaternion(q), R, atol=1e-12)


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_quaternion_half_turn(axis):
    R = -np.eye(3)
    R[axis, axis] = 1.0
    q = quaternion_from_rotation(R)
    assert abs(q[axis]) == pytest.approx(1.0)
    assert np.allclose(rotation_from_quaternion(q), R, atol=1e-12)


def test_normalize_quaternion():
    q = np.array([0.0, 0.0, 0.0, np.sqrt(1.01)])
    n = normalize_quaternion(q)
    assert np.sum(n**2) == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(normalize_quaternion(n), n, atol=1e-16)
    with pytest.raises(ZeroQuaternion):
        normalize_quaternion(np.zeros(4))


def test_propagate_quarter_turn_about_up():
    q = np.array([0.0, 0.0, 0.0, 1.0])
    n = 10000
    for _ in range(n):
        q = propagate_quaternion(q, [0.0, 0.0, np.pi / 2], 1.0 / n)
    assert np.allclose(rotation_from_quaternion(q), rotation_from_attitude([0, 0, -np.pi / 2]), atol=1e-3)
    with pytest.raises(ValueError):
        propagate_quaternion(q, [0, 0, 1], 0.0)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_skew_is_cross(v, w):
    assert np.allclose(skew(v) @ w, np.cross(v, w), atol=1e-9)
    assert np.allclose(skew(v), -skew(v).T)


def test_wrap():
    assert wrap_pi(-np.pi) == pytest.approx(np.pi)
    assert wrap_pi(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_2pi(-0.5) == pytest.approx(2 * np.pi - 0.5)


ORIGIN = (np.radians(45.42), np.radians(-75.70), 70.0)


def test_enu_north_100m():
    _, r_m = curvature_radii(ORIGIN[0])
    p = (ORIGIN[0] + 100.0 / (r_m + ORIGIN[2]), ORIGIN[1], ORIGIN[2])
    assert np.allclose(geodetic_to_enu(p, ORIGIN), [0.0, 100.0, 0.0], atol=1e-9)


@settings(max_examples=200)
@given(st.floats(-5000, 5000), st.floats(-5000, 5000), st.floats(-50, 100))
def test_enu_round_trip(e, n, u):
    back = geodetic_to_enu(enu_to_geodetic([e, n, u], ORIGIN), ORIGIN)
    assert np.allclose(back, [e, n, u], atol=1e-3)


def test_enu_across_antimeridian():
    origin = (0.1, np.pi - 1e-6, 0.0)
    p = enu_to_geodetic([100.0, 0.0, 0.0], origin)
    assert p[1] < 0
    assert np.allclose(geodetic_to_enu(p, origin), [100.0, 0.0, 0.0], atol=1e-6)


def test_gravity_increases_toward_pole():
    assert WGS84.gravity(np.pi / 2, 0.0) > WGS84.gravity(0.0, 0.0)
    assert WGS84.gravity(0.0, 0.0) == pytest.approx(9.7803253359)
