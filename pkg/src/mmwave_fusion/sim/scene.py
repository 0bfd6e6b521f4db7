"""2.5D urban scenes: building footprints with heights, BS sites, and a geodetic anchor."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..fiveg import BaseStation
from ..geo import GeodeticPosition


class SceneError(ValueError):
    pass


@dataclass
class Building:
    id: str
    footprint: np.ndarray  # (K, 2) vertices, counter-clockwise, not closed
    height: float

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
            raise SceneError(f"building {self.id}: footprint needs >= 3 (x, y) vertices")
        if _signed_area(fp) < 0:
            fp = fp[::-1].copy()
        self.footprint = fp
        if self.height <= 0:
            raise SceneError(f"building {self.id}: height must be positive")


@dataclass
class Facades:
    """All building edges as flat arrays; normals point out of the building."""

    a: np.ndarray
    b: np.ndarray
    normal: np.ndarray
    height: np.ndarray
    building: np.ndarray
    ids: list

    def __len__(self):
        return len(self.a)


@dataclass
class Scene:
    origin: GeodeticPosition
    buildings: list
    base_stations: list
    ue_height: float = 1.5
    carrier_hz: float = 28e9
    bandwidth_hz: float = 400e6
    name: str = "scene"
    _facades: Facades = field(default=None, repr=False, compare=False)

    @property
    def facades(self) -> Facades:
        if self._facades is None:
            self._facades = _build_facades(self.buildings)
        return self._facades

    def bs(self, bs_id: str) -> BaseStation:
        for b in self.base_stations:
            if b.id == bs_id:
                return b
        raise KeyError(bs_id)

    def inside_any(self, xy) -> bool:
        xy = np.asarray(xy, dtype=float)
        return any(point_in_polygon(xy, b.footprint) for b in self.buildings)

    def validate(self):
        for b in self.buildings:
            if not polygon_is_simple(b.footprint):
                raise SceneError(f"building {b.id} footprint self-intersects")
        for s in self.base_stations:
            if self.inside_any(s.xy):
                raise SceneError(f"base station {s.id} lies inside a building")
        return self

    def bounds(self):
        pts = np.vstack([b.footprint for b in self.buildings] + [[s.xy for s in self.base_stations]])
        return pts.min(axis=0), pts.max(axis=0)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "origin": {
                "lat_deg": float(np.degrees(self.origin.lat)),
                "lon_deg": float(np.degrees(self.origin.lon)),
                "h": float(self.origin.h),
            },
            "ue_height": float(self.ue_height),
            "carrier_hz": float(self.carrier_hz),
            "bandwidth_hz": float(self.bandwidth_hz),
            "buildings": [
                {"id": b.id, "height": float(b.height),
                 "footprint": [[round(float(x), 3), round(float(y), 3)] for x, y in b.footprint]}
                for b in self.buildings
            ],
            "base_stations": [
                {"id": s.id, "enu": [round(float(v), 3) for v in s.enu]} for s in self.base_stations
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            o = d["origin"]
            origin = GeodeticPosition(np.radians(o["lat_deg"]), np.radians(o["lon_deg"]), float(o["h"]))
            buildings = [Building(str(b["id"]), b["footprint"], float(b["height"])) for b in d["buildings"]]
            stations = [BaseStation(str(s["id"]), tuple(float(v) for v in s["enu"]))
                        for s in d.get("base_stations", [])]
        except KeyError as exc:
            raise SceneError(f"scene is missing field {exc}") from None
        return cls(origin, buildings, stations, float(d.get("ue_height", 1.5)),
                   float(d.get("carrier_hz", 28e9)), float(d.get("bandwidth_hz", 400e6)),
                   str(d.get("name", "scene")))


def load_scene(path) -> Scene:
    with open(path) as fh:
        return Scene.from_dict(yaml.safe_load(fh)).validate()


def save_scene(scene: Scene, path):
    Path(path).write_text(yaml.safe_dump(scene.to_dict(), sort_keys=False))


def _signed_area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def point_in_polygon(p, poly) -> bool:
    """Even-odd rule; points on the boundary count as outside."""
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if xc > x:
                inside = not inside
    return inside


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1 = _cross2(p2 - p1, q1 - p1)
    d2 = _cross2(p2 - p1, q2 - p1)
    d3 = _cross2(q2 - q1, p1 - q1)
    d4 = _cross2(q2 - q1, p2 - q1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def polygon_is_simple(poly) -> bool:
    n = len(poly)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True


def _build_facades(buildings) -> Facades:
    a, b, nrm, hgt, bid, ids = [], [], [], [], [], []
    for bi, bld in enumerate(buildings):
        fp = bld.footprint
        for k in range(len(fp)):
            p, q = fp[k], fp[(k + 1) % len(fp)]
            e = q - p
            length = np.hypot(*e)
            if length < 1e-9:
                continue
            a.append(p)
            b.append(q)
            nrm.append(np.array([e[1], -e[0]]) / length)  # outward for CCW polygons
            hgt.append(bld.height)
            bid.append(bi)
            ids.append(f"{bld.id}:{k}")
    return Facades(np.array(a), np.array(b), np.array(nrm), np.array(hgt), np.array(bid), ids)
