"""5G channel-parameter positioning.

Angles are azimuths clockwise from north, so a unit horizontal direction is
``(sin az, cos az)`` in (east, north). Elevations are positive upward.

For a single-bounce path two azimuths matter:

* the BS-side azimuth, pointing from the BS toward the scatterer (the
  departure angle of a downlink path), and
* the UE-side azimuth, pointing from the UE toward the scatterer (the
  direction the signal arrives from).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .geo import WGS84, EarthModel, GeodeticPosition, enu_to_geodetic

C = 299792458.0


class FivegError(ValueError):
    pass


class DegenerateGeometry(FivegError):
    pass


class InsufficientPaths(FivegError):
    pass


class IllConditioned(FivegError):
    pass


class PreconditionError(FivegError):
    pass


class Link(str, enum.Enum):
    LOS = "LoS"
    NLOS = "NLoS"


class ReflectionOrder(str, enum.Enum):
    SBR = "SBR"
    HIGHER = "HigherOrder"


class FixSource(str, enum.Enum):
    LOS = "LoS"
    SBR = "SBR"


@dataclass(frozen=True)
class ChannelObservation:
    t: float
    bs_id: str
    path_index: int
    rtt: float
    aod_az: float
    aod_el: float
    aoa_az: float
    rss: float
    truth_bounces: int | None = None


@dataclass(frozen=True)
class BaseStation:
    """A BS with its antenna position in the scene's local ENU frame."""

    id: str
    enu: tuple  # (east, north, up) m; up is antenna height above the ENU origin
    array: str = "8x1 ULA"

    @property
    def xy(self) -> np.ndarray:
        return np.asarray(self.enu[:2], dtype=float)

    @property
    def height(self) -> float:
        return float(self.enu[2])

    def geodetic(self, origin, earth: EarthModel = WGS84) -> GeodeticPosition:
        return GeodeticPosition(*enu_to_geodetic(np.asarray(self.enu, dtype=float), origin, earth))


@dataclass
class PositionFix:
    """A 5G position measurement. ``enu`` and ``covariance`` are in the local frame (m, m^2)."""

    position: GeodeticPosition
    enu: np.ndarray
    covariance: np.ndarray
    source: FixSource
    epoch: float
    n_paths: int = 1
    path_ids: tuple = ()


@dataclass(frozen=True)
class SbrLine:
    """Locus of UE positions consistent with one single-bounce path.

    Normal orientation: ``y = k x + b``. When the locus is (close to) vertical
    the axes are swapped and the line reads ``x = k y + b``.
    """

    k: float
    b: float
    swapped: bool = False
    path_ids: tuple = ()

    def normal_form(self):
        """Unit normal ``n`` and offset ``c`` with ``n . p = c`` on the line."""
        if self.swapped:
            n = np.array([1.0, -self.k])
        else:
            n = np.array([-self.k, 1.0])
        s = np.linalg.norm(n)
        return n / s, self.b / s

    def distance(self, point) -> float:
        n, c = self.normal_form()
        return float(abs(n @ np.asarray(point, dtype=float) - c))


def unit(az):
    return np.array([np.sin(az), np.cos(az)])


def rtt_to_distance(rtt):
    return C * np.asarray(rtt, dtype=float) / 2.0


def distance_to_rtt(d):
    return 2.0 * np.asarray(d, dtype=float) / C


def _fix(enu, cov, source, epoch, origin, earth, n_paths=1, path_ids=()):
    geo = GeodeticPosition(*enu_to_geodetic(enu, origin, earth))
    return PositionFix(geo, np.asarray(enu, dtype=float), np.asarray(cov, dtype=float),
                       source, epoch, n_paths, tuple(path_ids))


def los_point_3d(bs_enu, d3, az, el):
    bs_enu = np.asarray(bs_enu, dtype=float)
    return bs_enu + d3 * np.array([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)])


def los_fix_3d(bs: BaseStation, d3: float, az: float, el: float, origin, *, epoch: float = 0.0,
               sigmas=None, earth: EarthModel = WGS84) -> PositionFix:
    """3D UE position from range and departure azimuth/elevation at one BS.

    ``sigmas`` = (range, azimuth, elevation) standard deviations; when given the
    fix carries the first-order propagated covariance.
    """
    if d3 <= 0:
        raise FivegError("range must be positive")
    p = los_point_3d(bs.enu, d3, az, el)
    cov = np.zeros((3, 3))
    if sigmas is not None:
        sd, sa, se = sigmas
        ca, sa_, ce, se_ = np.cos(az), np.sin(az), np.cos(el), np.sin(el)
        J = np.array([
            [sa_ * ce, d3 * ca * ce, -d3 * sa_ * se_],
            [ca * ce, -d3 * sa_ * ce, -d3 * ca * se_],
            [se_, 0.0, d3 * ce],
        ])
        cov = J @ np.diag([sd**2, sa**2, se**2]) @ J.T
    return _fix(p, cov, FixSource.LOS, epoch, origin, earth)


def los_fix_2d(bs: BaseStation, d: float, az: float, ue_height: float, origin, *, epoch: float = 0.0,
               sigmas=None, height_sigma: float = 0.0, earth: EarthModel = WGS84) -> PositionFix:
    """2D UE position from horizontal range and azimuth, height held constant."""
    if d <= 0:
        raise FivegError("range must be positive")
    xy = bs.xy + d * unit(az)
    p = np.array([xy[0], xy[1], ue_height])
    cov = np.zeros((3, 3))
    if sigmas is not None:
        sd, sa = sigmas
        J = np.array([[np.sin(az), d * np.cos(az)], [np.cos(az), -d * np.sin(az)]])
        cov[:2, :2] = J @ np.diag([sd**2, sa**2]) @ J.T
    cov[2, 2] = height_sigma**2
    return _fix(p, cov, FixSource.LOS, epoch, origin, earth)


_VERTICAL_TOL = 1e-9


def sbr_line(bs: BaseStation, alpha: float, beta: float, d: float, path_ids=()) -> SbrLine:
    """Line locus of the UE for a single-bounce path.

    alpha: UE-side azimuth (UE toward scatterer); beta: BS-side azimuth (BS
    toward scatterer); d: horizontal path length.
    """
    ssum = np.sin(alpha) + np.sin(beta)
    csum = np.cos(alpha) + np.cos(beta)
    if abs(ssum) < _VERTICAL_TOL and abs(csum) < _VERTICAL_TOL:
        raise DegenerateGeometry("BS-side and UE-side azimuths are opposite; locus collapses")
    xb, yb = bs.xy
    # point of the locus at r = 0
    x0 = xb - d * np.sin(alpha)
    y0 = yb - d * np.cos(alpha)
    if abs(ssum) >= _VERTICAL_TOL:
        k = csum / ssum
        b = -k * (xb - d * np.sin(alpha)) + yb - d * np.cos(alpha)
        return SbrLine(float(k), float(b), False, tuple(path_ids))
    k = ssum / csum
    return SbrLine(float(k), float(x0 - k * y0), True, tuple(path_ids))


def sbr_point_for_r(bs: BaseStation, alpha: float, beta: float, d: float, r: float):
    """Scatterer and UE positions when the BS-scatterer leg has length ``r``."""
    if not 0.0 < r < d:
        raise FivegError("r must lie in (0, d)")
    scatterer = bs.xy + r * unit(beta)
    ue = scatterer - (d - r) * unit(alpha)
    return scatterer, ue


PARALLEL_LIMIT = np.radians(5.0)


def intersect_lines(lines: Sequence[SbrLine], min_angle: float = PARALLEL_LIMIT):
    """Point minimizing the summed squared perpendicular distance to ``lines``.

    With two lines this is their exact intersection. Returns ``(xy, A)`` where
    ``A`` holds the unit normals (one row per line).
    """
    if len(lines) < 2:
        raise InsufficientPaths(f"need at least 2 single-bounce paths, got {len(lines)}")
    forms = [ln.normal_form() for ln in lines]
    A = np.array([n for n, _ in forms])
    c = np.array([cc for _, cc in forms])
    # widest pairwise angle between line directions
    best = 0.0
    for i in range(len(A)):
        for j in range(i + 1, len(A)):
            s = abs(A[i, 0] * A[j, 1] - A[i, 1] * A[j, 0])
            best = max(best, float(np.arcsin(min(1.0, s))))
    if best < min_angle:
        raise IllConditioned(f"single-bounce loci nearly parallel ({np.degrees(best):.2f} deg)")
    if len(lines) == 2:
        xy = np.linalg.solve(A, c)
    else:
        xy = np.linalg.lstsq(A, c, rcond=None)[0]
    return xy, A


@dataclass(frozen=True)
class SbrPath:
    """Inputs of one single-bounce locus, kept for covariance propagation."""

    alpha: float
    beta: float
    d: float
    path_id: int = 0


def sbr_fix(bs: BaseStation, paths: Sequence[SbrPath], height: float, origin, *, epoch: float = 0.0,
            sigmas=None, height_sigma: float = 0.0, min_angle: float = PARALLEL_LIMIT,
            earth: EarthModel = WGS84) -> PositionFix:
    """Position fix from two or more single-bounce paths of one BS.

    ``sigmas`` = (horizontal range, UE-side azimuth, BS-side azimuth) standard
    deviations; the horizontal covariance is propagated numerically through
    the intersection, which also captures its conditioning.
    """
    lines = [sbr_line(bs, p.alpha, p.beta, p.d, (p.path_id,)) for p in paths]
    xy, _ = intersect_lines(lines, min_angle)
    cov = np.zeros((3, 3))
    if sigmas is not None:
        params = np.array([[p.d, p.alpha, p.beta] for p in paths], dtype=float).ravel()
        scale = np.tile(np.asarray(sigmas, dtype=float), len(paths))
        J = np.zeros((2, params.size))
        for i in range(params.size):
            h = 1e-6 * max(1.0, abs(params[i]))
            hi, lo = params.copy(), params.copy()
            hi[i] += h
            lo[i] -= h
            J[:, i] = (_sbr_xy(bs, hi, min_angle) - _sbr_xy(bs, lo, min_angle)) / (2 * h)
        cov[:2, :2] = J @ np.diag(scale**2) @ J.T
    cov[2, 2] = height_sigma**2
    enu = np.array([xy[0], xy[1], height])
    return _fix(enu, cov, FixSource.SBR, epoch, origin, earth, len(paths),
                [p.path_id for p in paths])


def _sbr_xy(bs, flat, min_angle):
    trip = flat.reshape(-1, 3)
    lines = [sbr_line(bs, a, b, d) for d, a, b in trip]
    return intersect_lines(lines, 0.0)[0]


@dataclass(frozen=True)
class PropagationModel:
    """Free-space link budget at the carrier with a fixed loss per specular bounce."""

    carrier_hz: float = 28e9
    tx_power_dbm: float = 30.0
    reflection_loss_db: float = 6.0
    nlos_threshold_db: float = 3.0

    def fspl_db(self, d):
        return 20.0 * np.log10(4.0 * np.pi * np.asarray(d, dtype=float) * self.carrier_hz / C)

    def rss(self, d, bounces: int = 0):
        return self.tx_power_dbm - self.fspl_db(d) - bounces * self.reflection_loss_db

    def distance_from_rss(self, rss):
        loss = self.tx_power_dbm - np.asarray(rss, dtype=float)
        return 10.0 ** (loss / 20.0) * C / (4.0 * np.pi * self.carrier_hz)

    def excess_loss_db(self, rtt, rss):
        """RSS shortfall relative to free space over the RTT range, in dB."""
        return 20.0 * np.log10(self.distance_from_rss(rss) / rtt_to_distance(rtt))


def detect_nlos(rtt: float, rss: float, model: PropagationModel) -> Link:
    """Compare the RTT range with the range implied by the RSS.

    A reflected path loses energy at every bounce, so its RSS-implied range
    overshoots the RTT range. The discrepancy is measured in dB (a log-ratio of
    the two ranges) so one threshold works at every distance. Ties are LoS.
    """
    excess = model.excess_loss_db(rtt, rss)
    return Link.NLOS if abs(excess) > model.nlos_threshold_db else Link.LOS


class ReflectionOrderClassifier(Protocol):
    def __call__(self, obs: ChannelObservation, model: PropagationModel) -> ReflectionOrder: ...


class OracleClassifier:
    """Reads the true bounce count attached by the simulator."""

    def __call__(self, obs: ChannelObservation, model: PropagationModel) -> ReflectionOrder:
        if obs.truth_bounces is None:
            raise PreconditionError("oracle classifier needs truth_bounces")
        return ReflectionOrder.SBR if obs.truth_bounces == 1 else ReflectionOrder.HIGHER


@dataclass(frozen=True)
class HeuristicClassifier:
    """Single bounce iff the excess loss sits inside the one-reflection budget.

    The budget is centred on one reflection loss with a half-width of half a
    reflection loss, so 1 bounce and 2 bounces are split at their midpoint.
    """

    half_width: float = 0.5  # in units of the per-bounce loss

    def __call__(self, obs: ChannelObservation, model: PropagationModel) -> ReflectionOrder:
        excess = model.excess_loss_db(obs.rtt, obs.rss)
        resid = abs(excess - model.reflection_loss_db)
        if resid < self.half_width * model.reflection_loss_db:
            return ReflectionOrder.SBR
        return ReflectionOrder.HIGHER


def classify_reflection_order(obs: ChannelObservation, classifier: ReflectionOrderClassifier,
                              model: PropagationModel) -> ReflectionOrder:
    if __debug__ and detect_nlos(obs.rtt, obs.rss, model) is Link.LOS:
        raise PreconditionError("reflection-order classification requires an NLoS path")
    return classifier(obs, model)


CHANNEL_COLUMNS = ("t", "bs_id", "path_index", "rtt_s", "aod_az_rad", "aod_el_rad",
                   "aoa_az_rad", "rss_dbm", "truth_bounce_count")


def write_channel_csv(path, observations: Sequence[ChannelObservation]):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHANNEL_COLUMNS)
        for o in observations:
            w.writerow([repr(float(o.t)), o.bs_id, o.path_index, repr(float(o.rtt)),
                        repr(float(o.aod_az)), repr(float(o.aod_el)), repr(float(o.aoa_az)),
                        repr(float(o.rss)), "" if o.truth_bounces is None else o.truth_bounces])


def read_channel_csv(path) -> list[ChannelObservation]:
    import csv

    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CHANNEL_COLUMNS[:-1]) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            tb = row.get("truth_bounce_count", "")
            out.append(ChannelObservation(
                float(row["t"]), row["bs_id"], int(row["path_index"]), float(row["rtt_s"]),
                float(row["aod_az_rad"]), float(row["aod_el_rad"]), float(row["aoa_az_rad"]),
                float(row["rss_dbm"]), int(tb) if tb not in ("", None) else None))
    return out
