"""2.5D geometric ray tracing: LoS plus specular reflections by the image method.

Facades are vertical planes standing on flat ground, so reflections act only
on the horizontal coordinates. Heights vary linearly along the unfolded path,
which sets elevation angles and decides whether a leg clears a roof.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fiveg import BaseStation, ChannelObservation, PropagationModel, distance_to_rtt
from .scene import Scene

_EPS_T = 1e-9


@dataclass(frozen=True)
class PathRecord:
    """One propagation path with its ground truth attached."""

    bs_id: str
    length: float  # 3D geometric length, m
    aod_az: float
    aod_el: float
    aoa_az: float
    rss: float
    bounces: int
    reflectors: tuple = ()
    points: tuple = ()  # horizontal reflection points
    t: float = 0.0
    path_index: int = 0

    @property
    def los(self) -> bool:
        return self.bounces == 0

    @property
    def rtt(self) -> float:
        return float(distance_to_rtt(self.length))

    def observation(self) -> ChannelObservation:
        return ChannelObservation(self.t, self.bs_id, self.path_index, self.rtt, self.aod_az,
                                  self.aod_el, self.aoa_az, self.rss, self.bounces)


def _azimuth(dx, dy):
    return np.mod(np.arctan2(dx, dy), 2.0 * np.pi)


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def blocked(p, q, zp, zq, facades, skip=()):
    """Which segments p->q (arrays (S, 2)) pass through a facade below its top.

    ``skip`` lists, per segment, facade indices to ignore (the reflectors the
    segment starts or ends on). Returns a boolean array (S,).
    """
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    zp = np.atleast_1d(zp)
    zq = np.atleast_1d(zq)
    if len(facades) == 0:
        return np.zeros(len(p), dtype=bool)
    d = (q - p)[:, None, :]
    e = (facades.b - facades.a)[None, :, :]
    w = facades.a[None, :, :] - p[:, None, :]
    den = _cross(d, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(w, e) / den
        s = _cross(w, d) / den
    hit = (np.abs(den) > 1e-12) & (t > _EPS_T) & (t < 1 - _EPS_T) & (s >= 0.0) & (s <= 1.0)
    z = zp[:, None] + t * (zq - zp)[:, None]
    hit &= z < facades.height[None, :]
    for i, ids in enumerate(skip):
        if len(ids):
            hit[i, list(ids)] = False
    return hit.any(axis=1)


def _mirror(pts, a, n):
    """Reflect points across the facade lines (a, n); broadcasts."""
    return pts - 2.0 * np.sum((pts - a) * n, axis=-1, keepdims=True) * n


def _meet(p, q, a, b):
    """Parameter along a->b where line p->q crosses it, and along p->q."""
    d = q - p
    e = b - a
    den = _cross(d, e)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = _cross(a - p, d) / den
        t = _cross(a - p, e) / den
    return s, t


def _legs_clear(nodes, z_ends, reflectors, facades):
    """Check each leg of a horizontal polyline; heights interpolated by length."""
    nodes = np.asarray(nodes)
    seg = np.diff(nodes, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    total = lens.sum()
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    frac = cum / total if total > 0 else np.zeros_like(cum)
    z = z_ends[0] + frac * (z_ends[1] - z_ends[0])
    # reflection points must sit on the wall, below its top
    for k, f in enumerate(reflectors):
        if z[k + 1] > facades.height[f]:
            return False, total, z
    skips = []
    for k in range(len(seg)):
        s = []
        if k > 0:
            s.append(reflectors[k - 1])
        if k < len(reflectors):
            s.append(reflectors[k])
        skips.append(s)
    hit = blocked(nodes[:-1], nodes[1:], z[:-1], z[1:], facades, skips)
    return not hit.any(), total, z


def _seg_dist(p, a, b):
    """Distance from point p to each segment a-b."""
    e = b - a
    u = np.clip(np.sum((p - a) * e, axis=1) / np.maximum(np.sum(e * e, axis=1), 1e-300), 0.0, 1.0)
    return np.hypot(*(a + u[:, None] * e - p).T)


def trace_paths(scene: Scene, bs: BaseStation, ue_enu, max_bounces: int = 2,
                model: PropagationModel | None = None, t: float = 0.0,
                max_excess: float = 150.0) -> list[PathRecord]:
    """All LoS, single- and (optionally) double-bounce paths from ``bs`` to the UE.

    Reflected paths whose horizontal length exceeds the direct distance by more
    than ``max_excess`` metres are not searched for; a facade can only carry
    such a path when it lies outside the corresponding ellipse.
    Records are sorted by RSS, strongest first, and numbered accordingly.
    """
    model = model or PropagationModel(carrier_hz=scene.carrier_hz)
    fac = scene.facades
    ue = np.asarray(ue_enu, dtype=float)
    if ue.size == 2:
        ue = np.array([ue[0], ue[1], scene.ue_height])
    src = bs.xy
    zs, zu = bs.height, ue[2]
    dst = ue[:2]
    out = []

    def record(nodes, reflectors, dh):
        dz = zu - zs
        length = float(np.hypot(dh, dz))
        first = nodes[1] - nodes[0]
        last = nodes[-2] - nodes[-1]
        out.append(PathRecord(
            bs.id, length, float(_azimuth(*first)), float(np.arctan2(dz, dh)),
            float(_azimuth(*last)), float(model.rss(length, len(reflectors))), len(reflectors),
            tuple(fac.ids[f] for f in reflectors), tuple(tuple(map(float, p)) for p in nodes[1:-1]), t))

    ok, dh, _ = _legs_clear([src, dst], (zs, zu), [], fac)
    if ok and dh > 0:
        record([src, dst], [], dh)

    near = np.zeros(len(fac), dtype=bool)
    if len(fac):
        reach = np.hypot(*(dst - src)) + max_excess
        near = _seg_dist(src, fac.a, fac.b) + _seg_dist(dst, fac.a, fac.b) <= reach

    if max_bounces >= 1 and len(fac):
        front_s = near & (np.sum((src - fac.a) * fac.normal, axis=1) > 0)
        front_u = np.sum((dst - fac.a) * fac.normal, axis=1) > 0
        img = _mirror(src[None, :], fac.a, fac.normal)
        s, _ = _meet(dst[None, :], img, fac.a, fac.b)
        cand = np.flatnonzero(front_s & front_u & (s > 0) & (s < 1))
        for f in cand:
            r = fac.a[f] + s[f] * (fac.b[f] - fac.a[f])
            ok, dh, _ = _legs_clear([src, r, dst], (zs, zu), [f], fac)
            if ok:
                record([src, r, dst], [f], dh)

    if max_bounces >= 2 and len(fac) > 1:
        out.extend(_double_bounce(fac, near, src, dst, zs, zu, bs, model, t))

    if len(fac):
        lim = np.hypot(reach, zu - zs) + 1e-9
        out = [p for p in out if p.bounces == 0 or p.length <= lim]
    out.sort(key=lambda p: (-p.rss, p.length))
    return [PathRecord(**{**p.__dict__, "path_index": i}) for i, p in enumerate(out)]


def _double_bounce(fac, near, src, dst, zs, zu, bs, model, t):
    a, n = fac.a, fac.normal
    front_s = near & (np.sum((src - a) * n, axis=1) > 0)
    front_u = near & (np.sum((dst - a) * n, axis=1) > 0)
    I = np.flatnonzero(front_s)
    J = np.flatnonzero(front_u)
    if len(I) == 0 or len(J) == 0:
        return []
    ii, jj = np.meshgrid(I, J, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    keep = ii != jj
    ii, jj = ii[keep], jj[keep]
    with np.errstate(invalid="ignore"):
        return _double_bounce_pairs(fac, ii, jj, src, dst, zs, zu, bs, model, t)


def _double_bounce_pairs(fac, ii, jj, src, dst, zs, zu, bs, model, t):
    a, b, n = fac.a, fac.b, fac.normal
    img1 = _mirror(src[None, :], a[ii], n[ii])
    img2 = _mirror(img1, a[jj], n[jj])
    s2, _ = _meet(np.broadcast_to(dst, img2.shape), img2, a[jj], b[jj])
    ok = (s2 > 0) & (s2 < 1)
    r2 = a[jj] + s2[:, None] * (b[jj] - a[jj])
    s1, _ = _meet(r2, img1, a[ii], b[ii])
    ok &= (s1 > 0) & (s1 < 1)
    r1 = a[ii] + s1[:, None] * (b[ii] - a[ii])
    # each bounce must face the leg that arrives at it
    ok &= np.sum((r2 - a[ii]) * n[ii], axis=1) > 0
    ok &= np.sum((r1 - a[jj]) * n[jj], axis=1) > 0
    out = []
    for k in np.flatnonzero(ok):
        nodes = [src, r1[k], r2[k], dst]
        good, dh, _ = _legs_clear(nodes, (zs, zu), [ii[k], jj[k]], fac)
        if not good:
            continue
        dz = zu - zs
        length = float(np.hypot(dh, dz))
        first = r1[k] - src
        last = r2[k] - dst
        out.append(PathRecord(
            bs.id, length, float(_azimuth(*first)), float(np.arctan2(dz, dh)), float(_azimuth(*last)),
            float(model.rss(length, 2)), 2, (fac.ids[ii[k]], fac.ids[jj[k]]),
            (tuple(map(float, r1[k])), tuple(map(float, r2[k]))), t))
    return out
