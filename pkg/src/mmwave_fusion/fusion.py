"""Loosely coupled INS/5G/odometer fusion: augmented-input UKF and a finite-difference EKF twin.

The state is the 9-vector [lat, lon, h, ve, vn, vu, pitch, roll, azimuth].
Prediction runs the strapdown mechanization with IMU noise as augmented
inputs; measurements (5G position fixes and odometer velocity) are linear in
the state, so the update is an exact Kalman update.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .fiveg import (
    FivegError,
    HeuristicClassifier,
    Link,
    OracleClassifier,
    PositionFix,
    PropagationModel,
    ReflectionOrder,
    SbrPath,
    detect_nlos,
    los_fix_3d,
    rtt_to_distance,
    sbr_fix,
)
from .geo import WGS84, EarthModel, curvature_radii, geodetic_to_enu, rotation_from_attitude, wrap_2pi, wrap_pi
from .ins import (
    ANGLE_IDX,
    STATE_DIM,
    ImuErrorModel,
    ImuLog,
    NavState,
    OdometerLog,
    OdometerSample,
    StreamOrdering,
    mechanize_batch,
    odometer_velocity_l,
)

log = logging.getLogger(__name__)

INPUT_DIM = 6  # gyro xyz, accel xyz
MEAS_DIM = 6  # lat, lon, h, ve, vn, vu

SRC_LOS = 1
SRC_SBR = 2
SRC_ODO = 4


class CovarianceNotPSD(ValueError):
    pass


class SingularInnovationCovariance(ValueError):
    pass


# --- types -------------------------------------------------------------------------


@dataclass
class FilterState:
    x: np.ndarray
    P: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.P = np.asarray(self.P, dtype=float).copy()
        if self.x.shape != (self.P.shape[0],) or self.P.shape[0] != self.P.shape[1]:
            raise ValueError("state and covariance shapes disagree")

    @property
    def nav(self) -> NavState:
        return NavState.from_vector(self.x)


@dataclass(frozen=True)
class ProcessNoise:
    """Per-sample input variances, gyro (rad/s)^2 then accel (m/s^2)^2."""

    gyro_var: tuple = (0.0, 0.0, 0.0)
    accel_var: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if np.any(np.asarray(self.gyro_var) < 0) or np.any(np.asarray(self.accel_var) < 0):
            raise ValueError("process noise variances must be non-negative")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.concatenate([self.gyro_var, self.accel_var]).astype(float))

    @classmethod
    def from_imu_model(cls, model: ImuErrorModel, rate: float, inflation: float = 1.0) -> "ProcessNoise":
        sw, sf = model.sample_sigmas(rate)
        return cls(tuple(inflation * sw**2), tuple(inflation * sf**2))


@dataclass(frozen=True)
class UkfParams:
    alpha: float = 1e-3
    kappa: float = 0.0
    beta: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")

    def weights(self, n: int):
        lam = self.alpha**2 * (n + self.kappa) - n
        if abs(n + lam) < 1e-12:
            raise ValueError("sigma-point scaling degenerate: lambda == -n")
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + 1.0 - self.alpha**2 + self.beta
        return wm, wc, n + lam


@dataclass
class MeasurementBundle:
    """Stacked measurement [lat, lon, h, ve, vn, vu] with an availability mask.

    ``R`` is the covariance of the selected rows (k x k, k = mask.sum()).
    ``H_att`` optionally adds attitude columns to the velocity rows.
    """

    z: np.ndarray
    mask: np.ndarray
    R: np.ndarray
    H_att: np.ndarray | None = None  # (3, 3) d(velocity measurement)/d(attitude)
    source: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        k = int(self.mask.sum())
        if self.z.shape != (MEAS_DIM,) or self.mask.shape != (MEAS_DIM,):
            raise ValueError("z and mask must have 6 entries")
        if self.R.shape != (k, k) and k:
            raise ValueError(f"R must be {k}x{k} for {k} selected rows")

    @classmethod
    def empty(cls) -> "MeasurementBundle":
        return cls(np.zeros(MEAS_DIM), np.zeros(MEAS_DIM, bool), np.zeros((0, 0)))

    def H(self, n: int = STATE_DIM) -> np.ndarray:
        H = np.zeros((MEAS_DIM, n))
        H[:6, :6] = np.eye(6)
        if self.H_att is not None:
            H[3:6, 6:9] = self.H_att
        return H[self.mask]


class Dynamics(Protocol):
    angle_idx: tuple

    def increment(self, X: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray: ...


@dataclass(frozen=True)
class Mechanization:
    """Strapdown mechanization as a batched state increment. U = [gyro, accel]."""

    earth: EarthModel = WGS84
    angle_idx: tuple = ANGLE_IDX

    def increment(self, X, U, dt):
        dx, _ = mechanize_batch(X, U[:, 3:6], U[:, 0:3], dt, self.earth, increment=True)
        return dx


@dataclass(frozen=True)
class LinearDynamics:
    """x_next = A x + B u; a test stub for the linear-Gaussian reduction."""

    A: np.ndarray
    B: np.ndarray
    angle_idx: tuple = ()

    def increment(self, X, U, dt):
        return X @ (self.A - np.eye(len(self.A))).T + U @ self.B.T


MECHANIZATION = Mechanization()


# --- covariance helpers --------------------------------------------------------------


def _symmetrize(P):
    return 0.5 * (P + P.T)


def _psd_sqrt(P, tol: float = 1e-9):
    """Lower Cholesky factor, clamping tiny negative eigenvalues if needed."""
    P = _symmetrize(P)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(P)
        scale = max(1.0, float(np.max(np.abs(w))))
        if np.min(w) < -tol * scale:
            raise CovarianceNotPSD(f"covariance has eigenvalue {np.min(w):.3e}") from None
        return V * np.sqrt(np.clip(w, 0.0, None))


def _wrap_rows(d, angle_idx):
    if angle_idx:
        d[..., list(angle_idx)] = wrap_pi(d[..., list(angle_idx)])
    return d


def _wrap_state(x, angle_idx):
    """Pitch, roll and longitude to (-pi, pi], azimuth to [0, 2pi)."""
    if not angle_idx:
        return x
    x = x.copy()
    x[list(angle_idx)] = wrap_pi(x[list(angle_idx)])
    if tuple(angle_idx) == ANGLE_IDX:
        x[1] = wrap_pi(x[1])
        x[8] = wrap_2pi(x[8])
    return x


# --- prediction -------------------------------------------------------------------


def sigma_points(x, P, Q, params: UkfParams):
    """Augmented sigma-point offsets (2n+1, n) around [x; 0] and weights."""
    n = len(x) + Q.shape[0]
    wm, wc, c = params.weights(n)
    L = np.zeros((n, n))
    L[: len(x), : len(x)] = _psd_sqrt(P)
    L[len(x):, len(x):] = np.diag(np.sqrt(np.clip(np.diag(Q), 0.0, None)))
    S = np.sqrt(c) * L.T
    offsets = np.vstack([np.zeros(n), S, -S])
    return offsets, wm, wc


def ukf_predict(state: FilterState, imu_f, imu_w, Q: ProcessNoise | np.ndarray, dt: float,
                params: UkfParams = UkfParams(), dynamics: Dynamics = MECHANIZATION) -> FilterState:
    """Unscented prediction through one IMU interval with noise-augmented inputs."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    Qm = Q.Q if isinstance(Q, ProcessNoise) else np.asarray(Q, dtype=float)
    nx = len(state.x)
    offsets, wm, wc = sigma_points(state.x, state.P, Qm, params)
    u = np.concatenate([np.asarray(imu_w, dtype=float), np.asarray(imu_f, dtype=float)])
    X = state.x + offsets[:, :nx]
    U = u + offsets[:, nx:]
    dX = dynamics.increment(X, U, dt)
    ang = dynamics.angle_idx
    # deviations of each propagated point from the propagated centre point
    dev = _wrap_rows(offsets[:, :nx] + (dX - dX[0]), ang)
    mean_dev = wm @ dev
    if ang:
        idx = list(ang)
        mean_dev[idx] = np.arctan2(wm @ np.sin(dev[:, idx]), wm @ np.cos(dev[:, idx]))
    resid = _wrap_rows(dev - mean_dev, ang)
    P = _symmetrize((resid * wc[:, None]).T @ resid)
    x = _wrap_state(state.x + dX[0] + mean_dev, ang)
    return FilterState(x, P, state.t + dt)


def jacobians(x, u, dt: float, dynamics: Dynamics = MECHANIZATION, rel_step: float = 1e-6):
    """Central-difference Jacobians (F, G) of the one-step transition."""
    nx, nu = len(x), len(u)
    hx = rel_step * np.maximum(np.abs(x), 1.0)
    hu = rel_step * np.maximum(np.abs(u), 1.0)
    X = np.tile(x, (2 * (nx + nu), 1))
    U = np.tile(u, (2 * (nx + nu), 1))
    for i in range(nx):
        X[2 * i, i] += hx[i]
        X[2 * i + 1, i] -= hx[i]
    for j in range(nu):
        r = 2 * (nx + j)
        U[r, j] += hu[j]
        U[r + 1, j] -= hu[j]
    dX = dynamics.increment(X, U, dt)
    diff = _wrap_rows(dX[0::2] - dX[1::2], dynamics.angle_idx)
    F = np.eye(nx) + (diff[:nx] / (2 * hx)[:, None]).T
    G = (diff[nx:] / (2 * hu)[:, None]).T
    return F, G


def ekf_predict(state: FilterState, imu_f, imu_w, Q: ProcessNoise | np.ndarray, dt: float,
                dynamics: Dynamics = MECHANIZATION) -> FilterState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    Qm = Q.Q if isinstance(Q, ProcessNoise) else np.asarray(Q, dtype=float)
    u = np.concatenate([np.asarray(imu_w, dtype=float), np.asarray(imu_f, dtype=float)])
    F, G = jacobians(state.x, u, dt, dynamics)
    dx = dynamics.increment(state.x[None], u[None], dt)[0]
    P = _symmetrize(F @ state.P @ F.T + G @ Qm @ G.T)
    return FilterState(_wrap_state(state.x + dx, dynamics.angle_idx), P, state.t + dt)


predict = ukf_predict


# --- update -----------------------------------------------------------------------


def update(state: FilterState, bundle: MeasurementBundle, angle_idx: tuple = ANGLE_IDX,
           gate: float | None = None) -> FilterState:
    """Exact Kalman update on the available rows (Joseph form).

    With ``gate`` set, the update is skipped when the innovation's normalized
    squared norm exceeds it.
    """
    if not bundle.mask.any():
        return FilterState(state.x, state.P, state.t)
    n = len(state.x)
    H = bundle.H(n)
    z = bundle.z[bundle.mask]
    # attitude columns (if any) model how the estimate's attitude error leaks into
    # the measurement; the innovation itself compares against position/velocity only
    innov = z - state.x[:MEAS_DIM][bundle.mask]
    if bundle.mask[1]:
        k = int(np.count_nonzero(bundle.mask[:1]))
        innov[k] = wrap_pi(innov[k])
    if not np.all(np.isfinite(innov)):
        raise ValueError("non-finite innovation")
    S = _symmetrize(H @ state.P @ H.T + bundle.R)
    # rows mix radians and metres, so judge conditioning on the correlation form
    d = np.sqrt(np.diag(S))
    if np.any(~(d > 0)) or np.linalg.cond(S / np.outer(d, d)) > 1e12:
        raise SingularInnovationCovariance("innovation covariance is singular")
    Sinv = np.linalg.inv(S)
    if gate is not None and float(innov @ Sinv @ innov) > gate:
        return FilterState(state.x, state.P, state.t)
    K = state.P @ H.T @ Sinv
    x = _wrap_state(state.x + K @ innov, angle_idx)
    A = np.eye(n) - K @ H
    P = _symmetrize(A @ state.P @ A.T + K @ bundle.R @ K.T)
    return FilterState(x, P, state.t)


ekf_update = update


# --- measurement construction -----------------------------------------------------------


def enu_to_geodetic_cov(cov_enu, lat, h, earth: EarthModel = WGS84):
    """Map an ENU (m^2) position covariance to (lat, lon, h) units."""
    r_n, r_m = curvature_radii(lat, earth)
    T = np.array([[0.0, 1.0 / (r_m + h), 0.0],
                  [1.0 / ((r_n + h) * np.cos(lat)), 0.0, 0.0],
                  [0.0, 0.0, 1.0]])
    return T @ cov_enu @ T.T


def position_bundle(fix: PositionFix, cov_enu=None, source: int = SRC_LOS,
                    earth: EarthModel = WGS84) -> MeasurementBundle:
    cov = fix.covariance if cov_enu is None else cov_enu
    lat, lon, h = fix.position
    z = np.zeros(MEAS_DIM)
    z[:3] = (lat, lon, h)
    mask = np.array([True, True, True, False, False, False])
    return MeasurementBundle(z, mask, enu_to_geodetic_cov(cov, lat, h, earth), source=source)


def odometer_bundle(speed: float, att, sigma: float, nhc_sigma: float,
                    coupling: bool = False) -> MeasurementBundle:
    """ENU velocity from odometer speed along the body forward axis.

    The noise is anisotropic: ``sigma`` along track, ``nhc_sigma`` across
    track and vertically (the non-holonomic constraint).
    """
    att = np.asarray(att, dtype=float)
    z = np.zeros(MEAS_DIM)
    z[3:6] = odometer_velocity_l(speed, att)
    C = rotation_from_attitude(att)
    R = C @ np.diag([nhc_sigma**2, sigma**2, nhc_sigma**2]) @ C.T
    H_att = None
    if coupling:
        H_att = np.zeros((3, 3))
        for i in range(3):
            h = 1e-6
            hi, lo = att.copy(), att.copy()
            hi[i] += h
            lo[i] -= h
            H_att[:, i] = -(odometer_velocity_l(speed, hi) - odometer_velocity_l(speed, lo)) / (2 * h)
    mask = np.array([False, False, False, True, True, True])
    return MeasurementBundle(z, mask, R, H_att, source=SRC_ODO)


# --- exclusion and assessment ---------------------------------------------------------


class Assessment(str, enum.Enum):
    INCLUDE = "Include"
    DISCARD = "Discard"


@dataclass
class AcceptedPaths:
    los: list = field(default_factory=list)
    sbr: list = field(default_factory=list)
    rejected: list = field(default_factory=list)


def exclude_measurements(observations, model: PropagationModel, classifier=None) -> AcceptedPaths:
    """Route LoS paths to the LoS solver and keep only NLoS paths classified as single-bounce."""
    classifier = classifier or OracleClassifier()
    out = AcceptedPaths()
    for obs in observations:
        if detect_nlos(obs.rtt, obs.rss, model) is Link.LOS:
            out.los.append(obs)
        elif classifier(obs, model) is ReflectionOrder.SBR:
            out.sbr.append(obs)
        else:
            out.rejected.append(obs)
    return out


def motion_bounds(prev: FilterState, speed: float, dt: float, epsilon: float,
                  earth: EarthModel = WGS84):
    """Dead-reckoned (lat, lon) centre and half-widths of the admissible box."""
    lat, lon, h = prev.x[:3]
    p, a = prev.x[6], prev.x[8]
    r_n, r_m = curvature_radii(lat, earth)
    vn = speed * np.cos(p) * np.cos(a)
    ve = speed * np.cos(p) * np.sin(a)
    centre = np.array([lat + vn * dt / (r_m + h), lon + ve * dt / ((r_n + h) * np.cos(lat))])
    half = np.array([(abs(vn) + epsilon) * dt / (r_m + h),
                     (abs(ve) + epsilon) * dt / ((r_n + h) * np.cos(lat))])
    return centre, half


def assess_sbr_fix(fix: PositionFix, prev: FilterState, odo: OdometerSample, dt: float,
                   epsilon: float = 1.0, earth: EarthModel = WGS84) -> Assessment:
    """Accept an SBR fix only if it lies within the vehicle's reach since ``prev``.

    The reach is a latitude/longitude box around the odometer dead-reckoned
    position. Its half-widths are the per-axis distance covered at the odometer
    speed plus a margin ``epsilon`` (m/s), times ``dt``.
    """
    centre, half = motion_bounds(prev, odo.speed, dt, epsilon, earth)
    d_lat = abs(fix.position.lat - centre[0])
    d_lon = abs(wrap_pi(fix.position.lon - centre[1]))
    return Assessment.INCLUDE if (d_lat < half[0] and d_lon < half[1]) else Assessment.DISCARD


# --- configuration -------------------------------------------------------------------


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "ukf"  # or "ekf"
    ukf: UkfParams = UkfParams()
    process_noise: ProcessNoise = ProcessNoise()
    use_sbr: bool = True
    classifier: str = "heuristic"  # or "oracle"
    assessment: bool = True
    epsilon: float = 1.0  # m/s
    r_mode: str = "propagated"  # or "nominal"
    nominal_range: float = 100.0
    sbr_inflation: float = 2.0
    sigma_t: float = 0.5e-9
    sigma_angle: float = np.radians(0.05)
    sigma_el: float = np.radians(0.05)
    sbr_height_factor: float = 10.0
    odo_sigma: float = 0.05
    nhc_sigma: float = 0.05
    odo_coupling: bool = True
    innovation_gate: float | None = None
    propagation: PropagationModel = PropagationModel()

    def __post_init__(self):
        if self.kind not in ("ukf", "ekf"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.classifier not in ("oracle", "heuristic"):
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.r_mode not in ("propagated", "nominal"):
            raise ValueError(f"unknown r_mode {self.r_mode!r}")

    def nominal_cov(self, sbr: bool) -> np.ndarray:
        sd = rtt_to_distance(self.sigma_t)
        horiz = np.hypot(sd, self.nominal_range * self.sigma_angle)
        vert = np.hypot(sd, self.nominal_range * self.sigma_el)
        if sbr:
            horiz *= self.sbr_inflation
        return np.diag([horiz**2, horiz**2, vert**2])

    def make_classifier(self):
        return OracleClassifier() if self.classifier == "oracle" else HeuristicClassifier()


# --- event loop --------------------------------------------------------------------


@dataclass
class FilterOutput:
    t: np.ndarray
    x: np.ndarray
    P: np.ndarray
    source: np.ndarray
    stats: dict

    def write_csv(self, path):
        cols = ["t", "lat_rad", "lon_rad", "h_m", "ve", "vn", "vu", "pitch", "roll", "azimuth",
                "source_mask"] + [f"P{i}{i}" for i in range(STATE_DIM)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.x[k]]
                           + [int(self.source[k])] + [repr(float(v)) for v in np.diag(self.P[k])])


def read_filter_csv(path):
    """Return ``(t, x, source_mask, P_diag)`` from a filter output CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:10], data[:, 10].astype(int), data[:, 11:20]


def _group_epochs(channel):
    epochs = {}
    last = -np.inf
    for obs in channel:
        if obs.t < last:
            raise StreamOrdering("channel observations must be time-ordered")
        last = obs.t
        epochs.setdefault(obs.t, []).append(obs)
    return epochs


class _Fuser:
    def __init__(self, config: FilterConfig, stations, origin, earth):
        self.cfg = config
        self.stations = {b.id: b for b in stations}
        self.origin = origin
        self.earth = earth
        self.classifier = config.make_classifier()
        self.prev_fix_state = None
        self.stats = {"los_fixes": 0, "sbr_fixes": 0, "sbr_discarded": 0, "sbr_insufficient": 0,
                      "epochs": 0, "no_fix_epochs": 0}

    def predict(self, s, f, w, dt, Q):
        if self.cfg.kind == "ukf":
            return ukf_predict(s, f, w, Q, dt, self.cfg.ukf)
        return ekf_predict(s, f, w, Q, dt)

    def serving(self, s, obs_list):
        ids = sorted({o.bs_id for o in obs_list if o.bs_id in self.stations})
        if not ids:
            return None
        ue = geodetic_to_enu(s.x[:3], self.origin, self.earth)[:2]
        return min(ids, key=lambda i: np.hypot(*(self.stations[i].xy - ue)))

    def fiveg(self, s, obs_list, odo_last):
        cfg = self.cfg
        self.stats["epochs"] += 1
        bs_id = self.serving(s, obs_list)
        src = 0
        if bs_id is None:
            self.stats["no_fix_epochs"] += 1
            return s, src
        bs = self.stations[bs_id]
        paths = exclude_measurements([o for o in obs_list if o.bs_id == bs_id], cfg.propagation,
                                     self.classifier)
        fixes = []
        sig = (rtt_to_distance(cfg.sigma_t), cfg.sigma_angle, cfg.sigma_el)
        for o in paths.los[:1]:
            fix = los_fix_3d(bs, float(rtt_to_distance(o.rtt)), o.aod_az, o.aod_el, self.origin,
                             epoch=o.t, sigmas=sig, earth=self.earth)
            cov = fix.covariance if cfg.r_mode == "propagated" else cfg.nominal_cov(False)
            fixes.append((fix, cov, SRC_LOS))
        if cfg.use_sbr and len(paths.sbr) >= 2:
            height = s.x[2] - self.origin.h
            h_sig = np.sqrt(cfg.sbr_height_factor * cfg.nominal_cov(False)[2, 2])
            try:
                sp = [SbrPath(o.aoa_az, o.aod_az, float(rtt_to_distance(o.rtt) * np.cos(o.aod_el)),
                              o.path_index) for o in paths.sbr]
                fix = sbr_fix(bs, sp, height, self.origin, epoch=obs_list[0].t,
                              sigmas=(sig[0], sig[1], sig[1]), height_sigma=h_sig, earth=self.earth)
            except FivegError:
                self.stats["sbr_insufficient"] += 1
                fix = None
            if fix is not None:
                keep = True
                if cfg.assessment and self.prev_fix_state is not None and odo_last is not None:
                    dt = fix.epoch - self.prev_fix_state.t
                    if dt > 0:
                        keep = assess_sbr_fix(fix, self.prev_fix_state, odo_last, dt, cfg.epsilon,
                                              self.earth) is Assessment.INCLUDE
                if keep:
                    if cfg.r_mode == "propagated":
                        cov = fix.covariance.copy()
                    else:
                        cov = cfg.nominal_cov(True)
                        cov[2, 2] = h_sig**2
                    fixes.append((fix, cov, SRC_SBR))
                else:
                    self.stats["sbr_discarded"] += 1
        elif cfg.use_sbr and paths.sbr:
            self.stats["sbr_insufficient"] += 1
        for fix, cov, kind in fixes:
            s = update(s, position_bundle(fix, cov, kind, self.earth), gate=cfg.innovation_gate)
            src |= kind
            self.stats["los_fixes" if kind == SRC_LOS else "sbr_fixes"] += 1
        if not fixes:
            self.stats["no_fix_epochs"] += 1
        self.prev_fix_state = s
        return s, src

    def odometer(self, s, speed, quantization):
        sigma = np.sqrt(self.cfg.odo_sigma**2 + quantization**2 / 12.0)
        b = odometer_bundle(speed, s.x[6:9], sigma, self.cfg.nhc_sigma, self.cfg.odo_coupling)
        return update(s, b, gate=self.cfg.innovation_gate)


def run_filter(imu: ImuLog, odometer: OdometerLog | None, channel, stations, origin,
               config: FilterConfig, init: FilterState, earth: EarthModel = WGS84) -> FilterOutput:
    """Time-ordered fusion loop.

    Predicts at the IMU rate; odometer and 5G updates happen at their own
    timestamps, after the prediction that reaches them. Returns the posterior
    at every IMU epoch with a bitmask of the sources fused since the previous one.
    """
    imu.check_order()
    if odometer is not None:
        odometer.check_order()
    epochs = _group_epochs(channel or [])
    events = []  # (t, order, payload)
    if odometer is not None:
        for k in range(len(odometer)):
            events.append((float(odometer.t[k]), 0, k))
    for t in epochs:
        events.append((float(t), 1, t))
    events.sort(key=lambda e: (e[0], e[1]))

    fuser = _Fuser(config, stations, origin, earth)
    Q = config.process_noise
    n = len(imu)
    xs = np.empty((n, STATE_DIM))
    Ps = np.empty((n, STATE_DIM, STATE_DIM))
    src = np.zeros(n, dtype=int)
    s = FilterState(init.x, init.P, float(imu.t[0]))
    ev = 0
    odo_last = None
    while ev < len(events) and events[ev][0] < imu.t[0]:
        ev += 1
    skipped = ev

    def apply(s, e):
        nonlocal odo_last
        t, kind, payload = e
        if kind == 0:
            odo_last = odometer[payload]
            return fuser.odometer(s, odo_last.speed, odometer.quantization), SRC_ODO
        return fuser.fiveg(s, epochs[payload], odo_last)

    for k in range(n):
        if k > 0:
            t_end = float(imu.t[k])
            f, w = imu.f[k - 1], imu.w[k - 1]
            # measurements strictly inside the interval: predict partially, update, continue
            while ev < len(events) and events[ev][0] < t_end:
                dt = events[ev][0] - s.t
                if dt > 0:
                    s = fuser.predict(s, f, w, dt, Q)
                s, bits = apply(s, events[ev])
                src[k] |= bits
                ev += 1
            s = fuser.predict(s, f, w, t_end - s.t, Q)
            s.t = t_end
        while ev < len(events) and events[ev][0] == imu.t[k]:
            s, bits = apply(s, events[ev])
            src[k] |= bits
            ev += 1
        xs[k] = s.x
        Ps[k] = s.P
    stats = dict(fuser.stats, skipped_before_start=skipped, ignored_after_end=len(events) - ev)
    return FilterOutput(imu.t.copy(), xs, Ps, src, stats)


def initial_state(x_true, sigma_pos: float = 10.0, sigma_vel: float = 1.0,
                  sigma_att: float = np.radians(5.0), seed=None, earth: EarthModel = WGS84) -> FilterState:
    """Diagonal initial covariance; with ``seed`` the mean is a draw around ``x_true``."""
    x_true = np.asarray(x_true, dtype=float)
    lat, h = x_true[0], x_true[2]
    r_n, r_m = curvature_radii(lat, earth)
    sig = np.array([sigma_pos / (r_m + h), sigma_pos / ((r_n + h) * np.cos(lat)), sigma_pos,
                    sigma_vel, sigma_vel, sigma_vel, sigma_att, sigma_att, sigma_att])
    P = np.diag(sig**2)
    x = x_true.copy()
    if seed is not None:
        x = x + np.random.default_rng(seed).standard_normal(STATE_DIM) * sig
        x = _wrap_state(x, ANGLE_IDX)
    return FilterState(x, P)


def nees(x_est, P, x_true) -> float:
    e = np.asarray(x_est, dtype=float) - np.asarray(x_true, dtype=float)
    e = _wrap_rows(e, (1,) + ANGLE_IDX)
    return float(e @ np.linalg.solve(P, e))

