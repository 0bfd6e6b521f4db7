"""Horizontal error statistics: RMS, max, sub-threshold percentages and the CDF."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..geo import WGS84, EarthModel, curvature_radii

THRESHOLDS = (("pct_sub_2m", 2.0), ("pct_sub_1m", 1.0), ("pct_sub_30cm", 0.3))


class AlignmentError(ValueError):
    pass


@dataclass
class ErrorReport:
    rms_2d: float
    max_2d: float
    pct_sub_2m: float
    pct_sub_1m: float
    pct_sub_30cm: float
    cdf: np.ndarray  # (n, 2): sorted error, cumulative fraction
    t: np.ndarray
    errors: np.ndarray

    def summary(self) -> dict:
        return {"epochs": int(len(self.errors)), "rms_2d": self.rms_2d, "max_2d": self.max_2d,
                "pct_sub_2m": self.pct_sub_2m, "pct_sub_1m": self.pct_sub_1m,
                "pct_sub_30cm": self.pct_sub_30cm}

    def write_errors_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "error_2d_m"])
            for t, e in zip(self.t, self.errors):
                w.writerow([repr(float(t)), repr(float(e))])

    def write_cdf_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_2d_m", "fraction"])
            for e, f in self.cdf:
                w.writerow([repr(float(e)), repr(float(f))])


def error_cdf(errors) -> np.ndarray:
    e = np.sort(np.asarray(errors, dtype=float))
    return np.column_stack([e, np.arange(1, len(e) + 1) / len(e)])


def report_from_errors(errors, t=None) -> ErrorReport:
    """Statistics of a per-epoch horizontal error series (metres)."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("empty error series")
    if not np.all(np.isfinite(e)) or np.any(e < 0):
        raise ValueError("errors must be finite and non-negative")
    t = np.arange(e.size, dtype=float) if t is None else np.asarray(t, dtype=float)
    pct = {name: 100.0 * np.count_nonzero(e < thr) / e.size for name, thr in THRESHOLDS}
    return ErrorReport(float(np.sqrt(np.mean(e**2))), float(e.max()), cdf=error_cdf(e), t=t, errors=e, **pct)


def align_nearest(t_est, t_truth):
    """Index of the nearest truth sample for each estimate epoch.

    An estimate is kept only when that sample lies within half the truth
    sampling period. Returns ``(keep_mask, truth_index)``.
    """
    t_est = np.asarray(t_est, dtype=float)
    t_truth = np.asarray(t_truth, dtype=float)
    if t_truth.size == 0:
        raise AlignmentError("empty truth series")
    if np.any(np.diff(t_truth) <= 0):
        raise AlignmentError("truth times must be strictly increasing")
    half = 0.5 * (np.median(np.diff(t_truth)) if t_truth.size > 1 else np.inf)
    j = np.clip(np.searchsorted(t_truth, t_est), 1, max(t_truth.size - 1, 1))
    if t_truth.size > 1:
        j = np.where(np.abs(t_truth[j - 1] - t_est) <= np.abs(t_truth[j] - t_est), j - 1, j)
    else:
        j = np.zeros_like(j)
    keep = np.abs(t_truth[j] - t_est) <= half + 1e-9
    return keep, j


def horizontal_errors(est_pos, truth_pos, earth: EarthModel = WGS84) -> np.ndarray:
    """2D error in the local ENU frame at each truth point; inputs (n, >=2) lat/lon radians."""
    est = np.atleast_2d(np.asarray(est_pos, dtype=float))
    tru = np.atleast_2d(np.asarray(truth_pos, dtype=float))
    lat = tru[:, 0]
    h = tru[:, 2] if tru.shape[1] > 2 else 0.0
    r_n, r_m = curvature_radii(lat, earth)
    dlon = (est[:, 1] - tru[:, 1] + np.pi) % (2 * np.pi) - np.pi
    de = dlon * (r_n + h) * np.cos(lat)
    dn = (est[:, 0] - lat) * (r_m + h)
    return np.hypot(de, dn)


def compute_error_report(t_est, est_pos, t_truth, truth_pos, earth: EarthModel = WGS84) -> ErrorReport:
    """Align by nearest truth sample and summarize the horizontal error."""
    keep, j = align_nearest(t_est, t_truth)
    if not np.any(keep):
        raise AlignmentError("no estimate epoch lies within half a truth period of a truth sample")
    est = np.asarray(est_pos, dtype=float)[keep]
    tru = np.asarray(truth_pos, dtype=float)[j[keep]]
    return report_from_errors(horizontal_errors(est, tru, earth), np.asarray(t_est, dtype=float)[keep])
