"""Strapdown mechanization in the local-level (ENU) frame and OBMS sensor models."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import (
    WGS84,
    EarthModel,
    attitude_from_rotation,
    curvature_radii,
    normalize_quaternion,
    omega_matrix,
    quaternion_from_rotation,
    rotation_from_attitude,
    rotation_from_quaternion,
    wrap_pi,
)

# state vector layout: [lat, lon, h, ve, vn, vu, pitch, roll, azimuth]
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
STATE_DIM = 9
ANGLE_IDX = (6, 7, 8)

_LAT_LIMIT = np.pi / 2 - 1e-6


class LatitudeSingularity(ValueError):
    pass


class StreamOrdering(ValueError):
    pass


@dataclass
class NavState:
    """Position (geodetic), ENU velocity and attitude, plus the internal quaternion."""

    lat: float
    lon: float
    h: float
    vel: np.ndarray
    att: np.ndarray
    quat: np.ndarray = None

    def __post_init__(self):
        self.vel = np.asarray(self.vel, dtype=float).copy()
        self.att = np.asarray(self.att, dtype=float).copy()
        if self.quat is None:
            self.quat = quaternion_from_rotation(rotation_from_attitude(self.att))
        else:
            self.quat = np.asarray(self.quat, dtype=float).copy()

    @classmethod
    def from_vector(cls, x, quat=None) -> "NavState":
        x = np.asarray(x, dtype=float)
        return cls(x[0], x[1], x[2], x[VEL], x[ATT], quat)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.lat, self.lon, self.h], self.vel, self.att])


@dataclass(frozen=True)
class ImuSample:
    t: float
    f_b: np.ndarray  # specific force, m/s^2
    w_b: np.ndarray  # angular rate, rad/s


@dataclass(frozen=True)
class OdometerSample:
    t: float
    speed: float  # signed forward speed, m/s
    quantization: float = 0.0


@dataclass
class ImuLog:
    """An IMU stream held column-wise."""

    t: np.ndarray
    f: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.f = np.asarray(self.f, dtype=float).reshape(-1, 3)
        self.w = np.asarray(self.w, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> ImuSample:
        return ImuSample(self.t[k], self.f[k], self.w[k])

    def check_order(self):
        if np.any(np.diff(self.t) <= 0):
            raise StreamOrdering("IMU timestamps must be strictly increasing")


@dataclass
class OdometerLog:
    t: np.ndarray
    speed: np.ndarray
    quantization: float = 0.0

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.speed = np.asarray(self.speed, dtype=float)

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k) -> OdometerSample:
        return OdometerSample(self.t[k], self.speed[k], self.quantization)

    def check_order(self):
        if np.any(np.diff(self.t) <= 0):
            raise StreamOrdering("odometer timestamps must be strictly increasing")


@dataclass(frozen=True)
class ImuErrorModel:
    """Per-axis IMU error budget.

    Noise terms are densities (per root-Hz); the per-sample standard deviation
    is density * sqrt(rate). Bias drift is a first-order Gauss-Markov process.
    """

    accel_noise: tuple = (0.0, 0.0, 0.0)  # m/s^2/sqrt(Hz)
    gyro_noise: tuple = (0.0, 0.0, 0.0)  # rad/s/sqrt(Hz)
    accel_bias: tuple = (0.0, 0.0, 0.0)  # m/s^2
    gyro_bias: tuple = (0.0, 0.0, 0.0)  # rad/s
    accel_drift: tuple = (0.0, 0.0, 0.0)  # steady-state sigma, m/s^2
    gyro_drift: tuple = (0.0, 0.0, 0.0)  # steady-state sigma, rad/s
    correlation_time: float = 3600.0  # s

    def __post_init__(self):
        for name in ("accel_noise", "gyro_noise", "accel_drift", "gyro_drift"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} must be non-negative")
        if self.correlation_time <= 0:
            raise ValueError("correlation_time must be positive")

    def sample_sigmas(self, rate: float):
        """Per-sample (gyro, accel) white-noise standard deviations at ``rate`` Hz."""
        root = np.sqrt(rate)
        return np.asarray(self.gyro_noise) * root, np.asarray(self.accel_noise) * root


def body_to_local(vec_b, att):
    return rotation_from_attitude(att) @ np.asarray(vec_b, dtype=float)


def earth_rate_l(lat, earth: EarthModel = WGS84):
    lat = np.asarray(lat, dtype=float)
    return np.stack(
        [np.zeros_like(lat), earth.omega * np.cos(lat), earth.omega * np.sin(lat)], axis=-1
    )


def transport_rate(vel, lat, h, earth: EarthModel = WGS84):
    """Rotation rate of the l-frame relative to the e-frame, in the l-frame."""
    lat = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat) > _LAT_LIMIT):
        raise LatitudeSingularity("transport rate undefined at the poles")
    vel = np.asarray(vel, dtype=float)
    r_n, r_m = curvature_radii(lat, earth)
    ve, vn = vel[..., 0], vel[..., 1]
    return np.stack(
        [-vn / (r_m + h), ve / (r_n + h), ve * np.tan(lat) / (r_n + h)], axis=-1
    )


def odometer_velocity_l(speed, att):
    """ENU velocity of a vehicle moving along its body y-axis (second column of R_b^l)."""
    att = np.asarray(att, dtype=float)
    p, a = att[..., 0], att[..., 2]
    unit = np.stack([np.sin(a) * np.cos(p), np.cos(a) * np.cos(p), np.sin(p)], axis=-1)
    return unit * np.asarray(speed, dtype=float)[..., None]


def mechanize_batch(x, f_b, w_b, dt: float, earth: EarthModel = WGS84, quat=None,
                    increment: bool = False):
    """Vectorized mechanization of N states through one IMU interval.

    x: (N, 9) states; f_b, w_b: (N, 3) or (3,) inputs. Returns ``(x_next, q_next)``,
    or ``(dx, q_next)`` with ``increment=True``. The increment is formed before it
    is added to the state, so differences between nearby states keep full
    precision (angle increments are wrapped to (-pi, pi]).

    Order: attitude (first-order quaternion step), then velocity (specific
    force rotated with the mean of the old and new attitude; Coriolis and
    gravity from the old state), then position (trapezoid on velocity).
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError(f"dt={dt} outside (0, 0.1] s")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    f_b = np.broadcast_to(np.asarray(f_b, dtype=float), (n, 3))
    w_b = np.broadcast_to(np.asarray(w_b, dtype=float), (n, 3))
    lat, h = x[:, 0], x[:, 2]
    v = x[:, VEL]

    if quat is None:
        R0 = rotation_from_attitude(x[:, ATT])
        q0 = quaternion_from_rotation(R0)
    else:
        q0 = np.atleast_2d(quat)
        R0 = rotation_from_quaternion(q0)

    w_ie = earth_rate_l(lat, earth)
    w_el = transport_rate(v, lat, h, earth)
    w_il_b = np.einsum("nji,nj->ni", R0, w_ie + w_el)
    w_lb = w_b - w_il_b

    q1 = q0 + 0.5 * np.einsum("nij,nj->ni", omega_matrix(w_lb), q0) * dt
    q1 = normalize_quaternion(q1)
    R1 = rotation_from_quaternion(q1)

    f_l = np.einsum("nij,nj->ni", 0.5 * (R0 + R1), f_b)
    coriolis = np.cross(2.0 * w_ie + w_el, v)
    g = earth.gravity(lat, h)
    acc = f_l - coriolis
    acc[:, 2] -= g

    r_n, r_m = curvature_radii(lat, earth)
    dv = acc * dt
    v_mid = v + 0.5 * dv
    dx = np.empty_like(x)
    dx[:, 0] = v_mid[:, 1] / (r_m + h) * dt
    dx[:, 1] = v_mid[:, 0] / ((r_n + h) * np.cos(lat)) * dt
    dx[:, 2] = v_mid[:, 2] * dt
    dx[:, VEL] = dv
    att1 = attitude_from_rotation(R1)
    if increment:
        dx[:, ATT] = wrap_pi(att1 - x[:, ATT])
        return dx, q1
    x1 = np.empty_like(x)
    x1[:, :3] = x[:, :3] + dx[:, :3]
    x1[:, 1] = wrap_pi(x1[:, 1])
    x1[:, VEL] = v + dv
    x1[:, ATT] = att1
    return x1, q1


def mechanize_step(state: NavState, imu: ImuSample, dt: float, earth: EarthModel = WGS84) -> NavState:
    """Advance a single NavState by one IMU sample, carrying its quaternion."""
    x1, q1 = mechanize_batch(state.as_vector()[None], imu.f_b, imu.w_b, dt, earth, state.quat[None])
    return NavState.from_vector(x1[0], q1[0])


def mechanize(state: NavState, imu: ImuLog, earth: EarthModel = WGS84) -> np.ndarray:
    """Pure dead reckoning over a whole log; returns (N, 9) states aligned with ``imu.t``.

    Row k holds the state at ``imu.t[k]``; sample k drives the interval (t_k, t_k+1].
    """
    imu.check_order()
    out = np.empty((len(imu), STATE_DIM))
    out[0] = state.as_vector()
    s = state
    for k in range(len(imu) - 1):
        s = mechanize_step(s, imu[k], imu.t[k + 1] - imu.t[k], earth)
        out[k + 1] = s.as_vector()
    return out


def corrupt_imu(truth: ImuLog, model: ImuErrorModel, seed) -> ImuLog:
    """Add constant bias, Gauss-Markov drift and white noise to a perfect IMU log."""
    rng = np.random.default_rng(seed)
    n = len(truth)
    if n > 1:
        dt = float(np.median(np.diff(truth.t)))
    else:
        dt = 1.0
    rate = 1.0 / dt
    sig_w, sig_f = model.sample_sigmas(rate)

    def drift(sigma_ss):
        sigma_ss = np.asarray(sigma_ss, dtype=float)
        out = np.zeros((n, 3))
        if not np.any(sigma_ss > 0):
            return out
        phi = np.exp(-dt / model.correlation_time)
        drive = sigma_ss * np.sqrt(1.0 - phi**2)
        b = rng.standard_normal(3) * sigma_ss
        for k in range(n):
            out[k] = b
            b = phi * b + drive * rng.standard_normal(3)
        return out

    f = truth.f + np.asarray(model.accel_bias) + drift(model.accel_drift)
    w = truth.w + np.asarray(model.gyro_bias) + drift(model.gyro_drift)
    if np.any(sig_f > 0):
        f = f + rng.standard_normal((n, 3)) * sig_f
    if np.any(sig_w > 0):
        w = w + rng.standard_normal((n, 3)) * sig_w
    return ImuLog(truth.t.copy(), f, w)


def corrupt_odometer(truth: OdometerLog, sigma: float, quantization: float, seed) -> OdometerLog:
    """White speed noise followed by quantization to multiples of ``quantization``."""
    rng = np.random.default_rng(seed)
    speed = truth.speed + rng.standard_normal(len(truth)) * sigma
    if quantization > 0:
        speed = np.round(speed / quantization) * quantization
    return OdometerLog(truth.t.copy(), speed, quantization)


IMU_COLUMNS = ("t", "fx", "fy", "fz", "wx", "wy", "wz")
ODO_COLUMNS = ("t", "v_odo")


def write_imu_csv(path, imu: ImuLog):
    data = np.column_stack([imu.t, imu.f, imu.w])
    _write_csv(path, IMU_COLUMNS, data)


def read_imu_csv(path) -> ImuLog:
    data = _read_csv(path, IMU_COLUMNS)
    log = ImuLog(data[:, 0], data[:, 1:4], data[:, 4:7])
    log.check_order()
    return log


def write_odometer_csv(path, odo: OdometerLog):
    _write_csv(path, ODO_COLUMNS, np.column_stack([odo.t, odo.speed]))


def read_odometer_csv(path, quantization: float = 0.0) -> OdometerLog:
    data = _read_csv(path, ODO_COLUMNS)
    log = OdometerLog(data[:, 0], data[:, 1], quantization)
    log.check_order()
    return log


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def _read_csv(path, header) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or tuple(c.strip() for c in got) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}, got {got}")
        rows = [[float(v) for v in row] for row in reader if row]
    return np.asarray(rows, dtype=float).reshape(-1, len(header))
