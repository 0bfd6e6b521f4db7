import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import ORIGIN, static_imu

from mmwave_fusion.geo import WGS84, curvature_radii, rotation_from_attitude
from mmwave_fusion.ins import (ImuErrorModel, ImuLog, LatitudeSingularity, NavState, OdometerLog, StreamOrdering,
                               body_to_local, corrupt_imu, corrupt_odometer, earth_rate_l, mechanize,
                               mechanize_batch, odometer_velocity_l, read_imu_csv, read_odometer_csv,
                               transport_rate, write_imu_csv, write_odometer_csv)

LAT, LON, H = ORIGIN


def test_body_to_local_heading():
    assert np.allclose(body_to_local([0, 1, 0], [0, 0, np.pi / 2]), [1, 0, 0], atol=1e-15)


def test_earth_rate():
    w = earth_rate_l(0.0)
    assert np.allclose(w, [0.0, WGS84.omega, 0.0])


def test_transport_rate_north():
    _, r_m = curvature_radii(0.0)
    w = transport_rate([0.0, 10.0, 0.0], 0.0, 0.0)
    assert w[0] == pytest.approx(-10.0 / r_m)
    assert w[1] == 0.0 and w[2] == 0.0
    with pytest.raises(LatitudeSingularity):
        transport_rate([1, 0, 0], np.pi / 2, 0.0)


@given(st.floats(-0.5, 0.5), st.floats(0, 2 * np.pi), st.floats(-30, 30))
def test_odometer_velocity_is_body_forward(p, a, v):
    assert np.allclose(odometer_velocity_l(v, [p, 0.3, a]), rotation_from_attitude([p, 0.3, a])[:, 1] * v,
                       atol=1e-12)


def test_static_equilibrium_levelled():
    att = np.array([0.02, -0.01, 1.0])
    s = NavState(LAT, LON, H, [0, 0, 0], att)
    x = mechanize(s, static_imu(att, seconds=10.0))
    assert np.max(np.abs(x[:, 3:6])) < 1e-6
    assert np.max(np.abs(x[:, 6:] - att)) < 1e-9


def test_forward_acceleration():
    att = np.array([0.0, 0.0, 0.0])
    imu = static_imu(att, seconds=10.0)
    imu.f[:, 1] += 1.0
    x = mechanize(NavState(LAT, LON, H, [0, 0, 0], att), imu)
    _, r_m = curvature_radii(LAT)
    assert x[-1, 4] == pytest.approx(10.0, abs=1e-3)
    assert (x[-1, 0] - LAT) * (r_m + H) == pytest.approx(50.0, abs=0.05)
    assert abs(x[-1, 3]) < 1e-2


def test_constant_turn_rate():
    att = np.array([0.0, 0.0, 0.0])
    imu = static_imu(att, seconds=9.0)
    imu.w[:, 2] -= np.radians(10.0)  # right turn: azimuth grows
    x = mechanize(NavState(LAT, LON, H, [0, 0, 0], att), imu)
    assert np.degrees(x[-1, 8]) == pytest.approx(90.0, abs=0.05)


def test_mechanize_rejects_bad_dt():
    with pytest.raises(ValueError):
        mechanize_batch(np.zeros((1, 9)), np.zeros(3), np.zeros(3), 0.5)


def test_stream_ordering():
    imu = ImuLog([0.0, 0.1, 0.1], np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(StreamOrdering):
        mechanize(NavState(LAT, LON, H, [0, 0, 0], [0, 0, 0]), imu)


def test_corrupt_imu_statistics():
    rate = 100.0
    n = 20000
    truth = ImuLog(np.arange(n) / rate, np.zeros((n, 3)), np.zeros((n, 3)))
    model = ImuErrorModel(accel_noise=(0.01,) * 3, gyro_noise=(0.001,) * 3, accel_bias=(0.05, 0.0, -0.05))
    noisy = corrupt_imu(truth, model, seed=3)
    assert np.allclose(noisy.f.mean(axis=0), [0.05, 0.0, -0.05], atol=0.005)
    assert np.std(noisy.f[:, 1]) == pytest.approx(0.01 * np.sqrt(rate), rel=0.03)
    assert np.std(noisy.w[:, 0]) == pytest.approx(0.001 * np.sqrt(rate), rel=0.03)
    again = corrupt_imu(truth, model, seed=3)
    assert np.array_equal(noisy.f, again.f) and np.array_equal(noisy.w, again.w)
    assert not np.array_equal(noisy.f, corrupt_imu(truth, model, seed=4).f)


def test_imu_error_model_validation():
    with pytest.raises(ValueError):
        ImuErrorModel(accel_noise=(-1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        ImuErrorModel(correlation_time=0.0)


def test_corrupt_odometer_quantization():
    odo = corrupt_odometer(OdometerLog(np.arange(10.0), np.full(10, 5.0)), 0.05, 0.1, seed=1)
    assert np.allclose(odo.speed / 0.1, np.round(odo.speed / 0.1))


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    imu = ImuLog(np.arange(5) * 0.01, rng.standard_normal((5, 3)), rng.standard_normal((5, 3)))
    write_imu_csv(tmp_path / "imu.csv", imu)
    back = read_imu_csv(tmp_path / "imu.csv")
    assert np.array_equal(back.f, imu.f) and np.array_equal(back.w, imu.w)
    odo = OdometerLog(np.arange(3.0), [1.0, 2.0, 3.0])
    write_odometer_csv(tmp_path / "odo.csv", odo)
    assert np.array_equal(read_odometer_csv(tmp_path / "odo.csv").speed, odo.speed)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_imu_csv(tmp_path / "bad.csv")


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(0, 2 * np.pi))
def test_static_equilibrium_any_attitude(p, r, a):
    att = np.array([p, r, a])
    x = mechanize(NavState(LAT, LON, H, [0, 0, 0], att), static_imu(att, seconds=0.5))
    assert np.max(np.abs(x[:, 3:6])) < 1e-8
