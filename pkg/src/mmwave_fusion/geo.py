"""Geodetic and attitude mathematics shared by every other module.

Conventions
-----------
* Local-level frame (l) is East-North-Up.
* Body frame (b) is x-right, y-forward, z-up.
* Attitude is (pitch, roll, azimuth); azimuth is clockwise from north.
* Quaternions are stored scalar-last: ``(q1, q2, q3, q4)`` with ``q4`` the
  scalar part. They parameterize the body-to-local rotation.

Most functions accept a single value or a batch along the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi


class GeoError(ValueError):
    """Base class for domain errors raised by the geometry layer."""


class DegenerateRotation(GeoError):
    pass


class GimbalProximity(GeoError):
    pass


class ZeroQuaternion(GeoError):
    pass


class GeodeticPosition(NamedTuple):
    lat: float  # rad
    lon: float  # rad
    h: float  # m above ellipsoid


class Attitude(NamedTuple):
    pitch: float
    roll: float
    azimuth: float


@dataclass(frozen=True)
class EarthModel:
    """WGS84 ellipsoid with Somigliana normal gravity."""

    a: float = 6378137.0
    e2: float = 6.69437999014e-3
    omega: float = 7.292115e-5
    gm: float = 3.986004418e14
    f: float = 1.0 / 298.257223563
    g_equator: float = 9.7803253359
    k_somigliana: float = 0.00193185265241

    def gravity(self, lat, h):
        """Normal gravity magnitude [m/s^2] at geodetic latitude and height."""
        s2 = np.sin(lat) ** 2
        g0 = self.g_equator * (1.0 + self.k_somigliana * s2) / np.sqrt(1.0 - self.e2 * s2)
        b = self.a * (1.0 - self.f)
        m = self.omega**2 * self.a**2 * b / self.gm
        return g0 * (
            1.0 - 2.0 / self.a * (1.0 + self.f + m - 2.0 * self.f * s2) * h + 3.0 * h**2 / self.a**2
        )


WGS84 = EarthModel()


def wrap_pi(angle):
    """Wrap to (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, TWO_PI) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if np.ndim(wrapped) else float(wrapped)


def wrap_2pi(angle):
    """Wrap to [0, 2*pi)."""
    wrapped = np.mod(np.asarray(angle, dtype=float), TWO_PI)
    wrapped = np.where(wrapped >= TWO_PI, 0.0, wrapped)
    return wrapped if np.ndim(wrapped) else float(wrapped)


def curvature_radii(lat, earth: EarthModel = WGS84):
    """Return ``(R_N, R_M)``: prime-vertical and meridian radii of curvature."""
    w = 1.0 - earth.e2 * np.sin(lat) ** 2
    r_n = earth.a / np.sqrt(w)
    r_m = earth.a * (1.0 - earth.e2) / w**1.5
    return r_n, r_m


def skew(v):
    """Cross-product matrix: ``skew(v) @ w == cross(v, w)``. Batched on leading axes."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rotation_from_attitude(att):
    """Body-to-local rotation matrix from (pitch, roll, azimuth)."""
    att = np.asarray(att, dtype=float)
    p, r, a = att[..., 0], att[..., 1], att[..., 2]
    sp, cp = np.sin(p), np.cos(p)
    sr, cr = np.sin(r), np.cos(r)
    sa, ca = np.sin(a), np.cos(a)
    R = np.empty(att.shape[:-1] + (3, 3))
    R[..., 0, 0] = ca * cr + sa * sp * sr
    R[..., 0, 1] = sa * cp
    R[..., 0, 2] = ca * sr - sa * sp * cr
    R[..., 1, 0] = -sa * cr + ca * sp * sr
    R[..., 1, 1] = ca * cp
    R[..., 1, 2] = -sa * sr - ca * sp * cr
    R[..., 2, 0] = -cp * sr
    R[..., 2, 1] = sp
    R[..., 2, 2] = cp * cr
    return R


def attitude_from_rotation(R, check: bool = True):
    """(pitch, roll, azimuth) from a body-to-local rotation matrix.

    Four-quadrant arctangents are used throughout; azimuth lands in [0, 2*pi).
    Raises GimbalProximity when cos(pitch) < 1e-6 and ``check`` is set.
    """
    R = np.asarray(R, dtype=float)
    horiz = np.hypot(R[..., 0, 1], R[..., 1, 1])
    if check and np.any(horiz < 1e-6):
        raise GimbalProximity("pitch too close to +/-90 deg for Euler extraction")
    p = np.arctan2(R[..., 2, 1], horiz)
    r = -np.arctan2(R[..., 2, 0], R[..., 2, 2])
    a = wrap_2pi(np.arctan2(R[..., 0, 1], R[..., 1, 1]))
    return np.stack([p, r, np.asarray(a)], axis=-1)


def rotation_from_quaternion(q):
    """Body-to-local rotation from a unit quaternion (scalar last)."""
    q = np.asarray(q, dtype=float)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = x * x - y * y - z * z + w * w
    R[..., 0, 1] = 2.0 * (x * y - z * w)
    R[..., 0, 2] = 2.0 * (x * z + y * w)
    R[..., 1, 0] = 2.0 * (x * y + z * w)
    R[..., 1, 1] = -x * x + y * y - z * z + w * w
    R[..., 1, 2] = 2.0 * (y * z - x * w)
    R[..., 2, 0] = 2.0 * (x * z - y * w)
    R[..., 2, 1] = 2.0 * (y * z + x * w)
    R[..., 2, 2] = -x * x - y * y + z * z + w * w
    return R


_TRACE_TOL = 1e-6


def quaternion_from_rotation(R):
    """Unit quaternion (scalar last) from a rotation matrix.

    Uses the scalar-first extraction whenever ``1 + trace`` is comfortably
    positive and falls back to the largest-diagonal branch otherwise, which
    covers 180 degree rotations.
    """
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    Rb = R.reshape(-1, 3, 3)
    q = np.empty((Rb.shape[0], 4))
    one_plus_trace = 1.0 + Rb[:, 0, 0] + Rb[:, 1, 1] + Rb[:, 2, 2]

    main = one_plus_trace > _TRACE_TOL
    if np.any(main):
        Rm = Rb[main]
        q4 = 0.5 * np.sqrt(one_plus_trace[main])
        q[main, 0] = 0.25 * (Rm[:, 2, 1] - Rm[:, 1, 2]) / q4
        q[main, 1] = 0.25 * (Rm[:, 0, 2] - Rm[:, 2, 0]) / q4
        q[main, 2] = 0.25 * (Rm[:, 1, 0] - Rm[:, 0, 1]) / q4
        q[main, 3] = q4

    rest = np.flatnonzero(~main)
    if rest.size:
        q[rest] = _quaternion_largest_diagonal(Rb[rest])

    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return q[0] if single else q.reshape(R.shape[:-2] + (4,))


def _quaternion_largest_diagonal(R):
    """Branch on the largest diagonal element; R is (N, 3, 3)."""
    d = np.diagonal(R, axis1=1, axis2=2)
    k = np.argmax(d, axis=1)
    i, j = (k + 1) % 3, (k + 2) % 3
    rows = np.arange(len(R))
    s = 1.0 + R[rows, k, k] - R[rows, i, i] - R[rows, j, j]
    if np.any(s <= _TRACE_TOL):
        raise DegenerateRotation("matrix is not a proper rotation")
    root = np.sqrt(s)
    q = np.empty((len(R), 4))
    q[rows, k] = 0.5 * root
    q[rows, i] = 0.5 * (R[rows, i, k] + R[rows, k, i]) / root
    q[rows, j] = 0.5 * (R[rows, j, k] + R[rows, k, j]) / root
    q[:, 3] = 0.5 * (R[rows, j, i] - R[rows, i, j]) / root
    return q


def normalize_quaternion(q):
    """First-order norm correction followed by exact renormalization."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 < 1e-24):
        raise ZeroQuaternion("cannot normalize a zero quaternion")
    delta = 1.0 - n2
    q = q * (1.0 + 0.5 * delta)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def omega_matrix(w):
    """4x4 rate matrix such that dq/dt = 0.5 * omega_matrix(w) @ q (scalar last)."""
    w = np.asarray(w, dtype=float)
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    O = np.zeros(w.shape[:-1] + (4, 4))
    O[..., 0, 1], O[..., 0, 2], O[..., 0, 3] = wz, -wy, wx
    O[..., 1, 0], O[..., 1, 2], O[..., 1, 3] = -wz, wx, wy
    O[..., 2, 0], O[..., 2, 1], O[..., 2, 3] = wy, -wx, wz
    O[..., 3, 0], O[..., 3, 1], O[..., 3, 2] = -wx, -wy, -wz
    return O


def propagate_quaternion(q, w_lb, dt: float):
    """One first-order quaternion step driven by body rate ``w_lb`` [rad/s]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    q = np.asarray(q, dtype=float)
    dq = 0.5 * np.einsum("...ij,...j->...i", omega_matrix(w_lb), q) * dt
    return normalize_quaternion(q + dq)


def quaternion_multiply(a, b):
    """Hamilton product a*b, scalar last."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    av, aw = a[..., :3], a[..., 3:]
    bv, bw = b[..., :3], b[..., 3:]
    vec = aw * bv + bw * av + np.cross(av, bv)
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    return np.concatenate([vec, w], axis=-1)


def quaternion_conjugate(q):
    q = np.array(q, dtype=float)
    q[..., :3] *= -1.0
    return q


def geodetic_to_enu(p, origin, earth: EarthModel = WGS84):
    """Curvilinear ENU offset of ``p`` from ``origin``; radii taken at the origin."""
    p = np.asarray(p, dtype=float)
    lat0, lon0, h0 = origin
    r_n, r_m = curvature_radii(lat0, earth)
    east = wrap_pi(p[..., 1] - lon0) * (r_n + h0) * np.cos(lat0)
    north = (p[..., 0] - lat0) * (r_m + h0)
    up = p[..., 2] - h0
    return np.stack([east, north, up], axis=-1)


def enu_to_geodetic(enu, origin, earth: EarthModel = WGS84):
    """Inverse of :func:`geodetic_to_enu`."""
    enu = np.asarray(enu, dtype=float)
    lat0, lon0, h0 = origin
    r_n, r_m = curvature_radii(lat0, earth)
    lat = lat0 + enu[..., 1] / (r_m + h0)
    lon = wrap_pi(lon0 + enu[..., 0] / ((r_n + h0) * np.cos(lat0)))
    h = h0 + enu[..., 2]
    return np.stack([lat, np.asarray(lon), h], axis=-1)


def enu_scale(origin, earth: EarthModel = WGS84):
    """Metres per radian (east, north) at ``origin``; the Jacobian of geodetic_to_enu."""
    lat0, _, h0 = origin
    r_n, r_m = curvature_radii(lat0, earth)
    return np.array([(r_n + h0) * np.cos(lat0), r_m + h0])
