"""Ground-truth vehicle trajectories and the perfect sensor streams that reproduce them.

The path is a polyline with circular fillets at each interior waypoint. Speed
follows an acceleration-limited profile with full stops. The perfect IMU
stream is obtained by inverting one discrete mechanization step at a time, so
mechanizing it returns the truth up to round-off.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..fiveg import BaseStation
from ..geo import (
    WGS84,
    EarthModel,
    GeodeticPosition,
    curvature_radii,
    enu_to_geodetic,
    geodetic_to_enu,
    quaternion_conjugate,
    quaternion_from_rotation,
    quaternion_multiply,
    rotation_from_quaternion,
    rotation_from_attitude,
    wrap_pi,
)
from ..ins import ImuLog, OdometerLog, earth_rate_l, transport_rate


class InfeasibleDynamics(ValueError):
    pass


@dataclass(frozen=True)
class DynamicsProfile:
    cruise_speed: float = 10.0  # m/s
    accel: float = 2.0  # m/s^2
    decel: float = 3.0  # m/s^2
    turn_radius: float = 12.0  # m, fillet radius at waypoints
    turn_speed: float | None = None  # m/s cap inside fillets
    lateral_accel_cap: float = 4.0  # m/s^2
    stops: tuple = ()  # ((waypoint index, dwell s), ...)
    segment_speeds: tuple | None = None  # optional cap per waypoint segment, m/s
    start_dwell: float = 2.0
    end_dwell: float = 2.0


@dataclass
class TruthTrajectory:
    t: np.ndarray
    states: np.ndarray  # (N, 9)
    quat: np.ndarray  # (N, 4)
    enu: np.ndarray  # (N, 3)
    speed: np.ndarray
    imu: ImuLog
    odometer: OdometerLog
    origin: GeodeticPosition
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    @property
    def rate(self) -> float:
        return 1.0 / float(self.t[1] - self.t[0])

    def index_at(self, t) -> np.ndarray:
        """Nearest sample index for each time in ``t``."""
        idx = np.clip(np.searchsorted(self.t, t), 1, len(self.t) - 1)
        left = self.t[idx - 1]
        return np.where(np.abs(np.asarray(t) - left) <= np.abs(self.t[idx] - np.asarray(t)), idx - 1, idx)


# --- path geometry ---------------------------------------------------------------


@dataclass
class _Piece:
    s0: float
    length: float
    start: np.ndarray
    heading: float  # azimuth at the start
    center: np.ndarray | None = None
    turn: float = 0.0  # +1 left (counter-clockwise), -1 right
    radius: float = np.inf
    segments: tuple = ()  # waypoint segments this piece belongs to


class Path2D:
    """Arc-length parameterized polyline with circular fillets."""

    def __init__(self, waypoints, turn_radius: float):
        wp = np.asarray(waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 2:
            raise ValueError("need at least two (east, north) waypoints")
        seg = np.diff(wp, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lens < 1e-6):
            raise ValueError("consecutive waypoints coincide")
        u = seg / lens[:, None]
        n = len(wp)
        tangent_len = np.zeros(n)
        radii = np.zeros(n)
        turns = np.zeros(n)
        for i in range(1, n - 1):
            cross = u[i - 1, 0] * u[i, 1] - u[i - 1, 1] * u[i, 0]
            dot = np.clip(u[i - 1] @ u[i], -1.0, 1.0)
            theta = np.arctan2(abs(cross), dot)
            if theta < 1e-9:
                continue
            if theta > np.pi - 1e-3:
                raise ValueError(f"waypoint {i} reverses the path")
            # shrink the fillet when neighbouring segments are short
            limit = 0.5 * min(lens[i - 1], lens[i])
            r = min(turn_radius, limit / np.tan(theta / 2))
            radii[i] = r
            tangent_len[i] = r * np.tan(theta / 2)
            turns[i] = np.sign(cross)
        pieces = []
        s = 0.0
        self.waypoint_s = np.zeros(n)
        for i in range(n - 1):
            start = wp[i] + tangent_len[i] * u[i]
            end = wp[i + 1] - tangent_len[i + 1] * u[i]
            L = float(np.hypot(*(end - start)))
            heading = float(np.arctan2(u[i, 0], u[i, 1]))
            if L > 0:
                pieces.append(_Piece(s, L, start, heading, segments=(i,)))
                s += L
            nxt = i + 1
            if nxt < n - 1 and radii[nxt] > 0:
                theta = np.arctan2(abs(u[i, 0] * u[nxt, 1] - u[i, 1] * u[nxt, 0]), u[i] @ u[nxt])
                arc = radii[nxt] * theta
                sigma = turns[nxt]
                center = end + sigma * radii[nxt] * np.array([-u[i, 1], u[i, 0]])
                pieces.append(_Piece(s, arc, end, heading, center, sigma, radii[nxt], (i, nxt)))
                self.waypoint_s[nxt] = s + 0.5 * arc
                s += arc
            elif nxt < n:
                self.waypoint_s[nxt] = s
        self.pieces = pieces
        self.n_segments = n - 1
        self.length = s
        self._starts = np.array([p.s0 for p in pieces])

    def piece_index(self, s):
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        return np.clip(np.searchsorted(self._starts, s, side="right") - 1, 0, len(self.pieces) - 1)

    def evaluate(self, s):
        """Position (N, 2), azimuth (N,), curvature (N,) at arc lengths ``s``."""
        s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, self.length)
        idx = self.piece_index(s)
        xy = np.empty((len(s), 2))
        az = np.empty(len(s))
        kappa = np.zeros(len(s))
        for k in np.unique(idx):
            p = self.pieces[k]
            m = idx == k
            ds = s[m] - p.s0
            if p.center is None:
                xy[m] = p.start + ds[:, None] * np.array([np.sin(p.heading), np.cos(p.heading)])
                az[m] = p.heading
            else:
                phi = p.turn * ds / p.radius  # counter-clockwise rotation angle
                r0 = p.start - p.center
                c, sn = np.cos(phi), np.sin(phi)
                xy[m, 0] = p.center[0] + c * r0[0] - sn * r0[1]
                xy[m, 1] = p.center[1] + sn * r0[0] + c * r0[1]
                az[m] = p.heading - phi
                kappa[m] = 1.0 / p.radius
        return xy, np.mod(az, 2 * np.pi), kappa


# --- speed profile ----------------------------------------------------------------


def _speed_profile(path: Path2D, prof: DynamicsProfile, ds: float = 0.05):
    """Acceleration-limited speed on an arc-length grid (forward/backward pass)."""
    n = max(int(np.ceil(path.length / ds)), 2)
    s = np.linspace(0.0, path.length, n + 1)
    _, _, kappa = path.evaluate(s)
    vmax = np.full_like(s, prof.cruise_speed)
    if prof.turn_speed is not None:
        vmax = np.where(kappa > 0, np.minimum(vmax, prof.turn_speed), vmax)
    if prof.segment_speeds is not None:
        caps = np.asarray(prof.segment_speeds, dtype=float)
        if len(caps) != path.n_segments:
            raise ValueError(f"segment_speeds needs {path.n_segments} entries")
        piece_cap = np.array([caps[list(p.segments)].min() for p in path.pieces])
        vmax = np.minimum(vmax, piece_cap[path.piece_index(s)])
    stop_nodes = {0: prof.start_dwell, n: prof.end_dwell}
    for wi, dwell in prof.stops:
        node = int(np.argmin(np.abs(s - path.waypoint_s[int(wi)])))
        stop_nodes[node] = stop_nodes.get(node, 0.0) + float(dwell)
    for node in stop_nodes:
        vmax[node] = 0.0
    h = np.diff(s)
    v = vmax.copy()
    for i in range(1, len(s)):
        v[i] = min(v[i], np.sqrt(v[i - 1] ** 2 + 2 * prof.accel * h[i - 1]))
    for i in range(len(s) - 2, -1, -1):
        v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2 * prof.decel * h[i]))
    lat = v**2 * kappa
    if np.any(lat > prof.lateral_accel_cap * (1 + 1e-9)):
        k = int(np.argmax(lat))
        raise InfeasibleDynamics(
            f"lateral acceleration {lat[k]:.2f} m/s^2 at s={s[k]:.1f} m exceeds the "
            f"{prof.lateral_accel_cap} m/s^2 cap; lower turn_speed or raise turn_radius")
    return s, v, stop_nodes


def _time_law(s, v, stop_nodes):
    """Piecewise constant-acceleration time law; returns a sampler t -> (s, speed)."""
    h = np.diff(s)
    acc = (v[1:] ** 2 - v[:-1] ** 2) / (2 * h)
    seg_dt = 2 * h / np.maximum(v[:-1] + v[1:], 1e-12)
    # knots: each grid interval, plus a dwell interval in front of stop nodes
    t_knots, s_knots, v_knots, a_knots = [], [], [], []
    t = 0.0
    for i in range(len(h) + 1):
        dwell = stop_nodes.get(i, 0.0)
        if dwell > 0:
            t_knots.append(t)
            s_knots.append(s[i])
            v_knots.append(0.0)
            a_knots.append(0.0)
            t += dwell
        if i < len(h):
            t_knots.append(t)
            s_knots.append(s[i])
            v_knots.append(v[i])
            a_knots.append(acc[i])
            t += seg_dt[i]
    t_knots = np.array(t_knots)
    s_knots, v_knots, a_knots = map(np.array, (s_knots, v_knots, a_knots))

    def sample(tq):
        k = np.clip(np.searchsorted(t_knots, tq, side="right") - 1, 0, len(t_knots) - 1)
        tau = tq - t_knots[k]
        sq = s_knots[k] + v_knots[k] * tau + 0.5 * a_knots[k] * tau**2
        vq = v_knots[k] + a_knots[k] * tau
        return np.minimum(sq, s[-1]), np.maximum(vq, 0.0)

    return sample, t


# --- inversion ---------------------------------------------------------------------


def _invert_imu(t, vel, att, lat0, lon0, h0, earth):
    """Integrate truth position and derive the IMU stream that mechanizes onto it."""
    n = len(t)
    R = rotation_from_attitude(att)
    q = quaternion_from_rotation(R)
    R = rotation_from_quaternion(q)
    lat = np.empty(n)
    lon = np.empty(n)
    h = np.empty(n)
    lat[0], lon[0], h[0] = lat0, lon0, h0
    f = np.zeros((n, 3))
    w = np.zeros((n, 3))
    for k in range(n - 1):
        dt = t[k + 1] - t[k]
        r_n, r_m = curvature_radii(lat[k], earth)
        vm = 0.5 * (vel[k] + vel[k + 1])
        lat[k + 1] = lat[k] + vm[1] / (r_m + h[k]) * dt
        lon[k + 1] = wrap_pi(lon[k] + vm[0] / ((r_n + h[k]) * np.cos(lat[k])) * dt)
        h[k + 1] = h[k] + vm[2] * dt
    w_ie = earth_rate_l(lat, earth)
    w_el = transport_rate(vel, lat, h, earth)
    g = earth.gravity(lat, h)
    dq = quaternion_multiply(quaternion_conjugate(q[:-1]), q[1:])
    dq *= np.where(dq[:, 3:] < 0, -1.0, 1.0)
    dts = np.diff(t)
    w_lb = 2.0 * dq[:, :3] / (dq[:, 3:] * dts[:, None])
    w_il_b = np.einsum("nji,nj->ni", R[:-1], (w_ie + w_el)[:-1])
    w[:-1] = w_lb + w_il_b
    rhs = (vel[1:] - vel[:-1]) / dts[:, None] + np.cross(2 * w_ie[:-1] + w_el[:-1], vel[:-1])
    rhs[:, 2] += g[:-1]
    f[:-1] = np.linalg.solve(0.5 * (R[:-1] + R[1:]), rhs[..., None])[..., 0]
    # the last sample drives nothing; repeat its predecessor for a tidy log
    f[-1], w[-1] = f[-2], w[-2]
    return np.column_stack([lat, lon, h]), q, f, w


def generate_trajectory(waypoints, profile: DynamicsProfile = DynamicsProfile(), *,
                        origin: GeodeticPosition, imu_rate: float = 50.0, odo_rate: float = 1.0,
                        ue_height: float = 1.5, earth: EarthModel = WGS84) -> TruthTrajectory:
    """Truth trajectory along ``waypoints`` (local ENU metres) with perfect sensor streams."""
    if imu_rate < 10.0:
        raise ValueError("imu_rate must be at least 10 Hz")
    path = Path2D(waypoints, profile.turn_radius)
    s_grid, v_grid, stops = _speed_profile(path, profile)
    sample, duration = _time_law(s_grid, v_grid, stops)
    n = int(np.floor(duration * imu_rate)) + 1
    t = np.arange(n) / imu_rate
    s, speed = sample(t)
    xy, az, _ = path.evaluate(s)
    vel = np.column_stack([speed * np.sin(az), speed * np.cos(az), np.zeros(n)])
    att = np.column_stack([np.zeros(n), np.zeros(n), az])

    start = enu_to_geodetic(np.array([xy[0, 0], xy[0, 1], ue_height]), origin, earth)
    llh, q, f, w = _invert_imu(t, vel, att, *start, earth)
    states = np.column_stack([llh, vel, att])
    enu = geodetic_to_enu(llh, origin, earth)

    step = imu_rate / odo_rate
    if abs(step - round(step)) > 1e-9:
        raise ValueError("imu_rate must be an integer multiple of odo_rate")
    oi = np.arange(0, n, int(round(step)))
    odo = OdometerLog(t[oi], speed[oi], 0.0)
    meta = {"length_m": path.length, "duration_s": float(t[-1]), "imu_rate": imu_rate,
            "odo_rate": odo_rate}
    return TruthTrajectory(t, states, q, enu, speed, ImuLog(t, f, w), odo, origin, meta)


TRUTH_COLUMNS = ("t", "lat_rad", "lon_rad", "h_m", "ve", "vn", "vu", "pitch", "roll", "azimuth")


def write_truth_csv(path, truth: TruthTrajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_COLUMNS)
        for tk, row in zip(truth.t, truth.states):
            w.writerow([repr(float(tk))] + [repr(float(v)) for v in row])


def read_truth_csv(path):
    """Return ``(t, states)`` from a truth CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


# --- base stations -----------------------------------------------------------------


def place_base_stations(route, spacing: float = 250.0, *, offset: float = 8.0, height: float = 10.0,
                        jitter: float = 0.0, seed=0, scene=None, prefix: str = "gNB") -> list:
    """Sites every ``spacing`` metres along ``route``, pushed sideways to the kerb.

    Sides alternate. With ``jitter`` > 0 each site slides along the route by a
    seeded uniform offset. A site that lands inside a building tries the other
    side and then smaller offsets.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    path = Path2D(route, turn_radius=1e-9)
    n = int(np.floor(path.length / spacing + 1e-9)) + 1
    rng = np.random.default_rng(seed)
    s = np.arange(n) * spacing
    if jitter > 0:
        s = np.clip(s + rng.uniform(-jitter, jitter, n), 0.0, path.length)
    xy, az, _ = path.evaluate(s)
    sites = []
    for i in range(n):
        left = np.array([-np.cos(az[i]), np.sin(az[i])])  # 90 deg counter-clockwise of travel
        side = 1.0 if i % 2 == 0 else -1.0
        placed = None
        for off in (offset, offset / 2, offset / 4):
            for sgn in (side, -side):
                p = xy[i] + sgn * off * left
                if scene is None or not scene.inside_any(p):
                    placed = p
                    break
            if placed is not None:
                break
        if placed is None:
            raise ValueError(f"no free sidewalk position near route station {i}")
        sites.append(BaseStation(f"{prefix}{i}", (float(placed[0]), float(placed[1]), float(height))))
    return sites
