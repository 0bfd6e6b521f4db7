"""Bundled downtown-like scene and its preset routes.

The city is a street grid of block buildings with three plazas on the
central boulevard. Each plaza has a tall central tower that hides the plaza
BS from the far side, ringed by slabs along an irregular heptagon (no two
walls parallel) so single-bounce loci cross at healthy angles.

Regenerate the bundled files with ``python3 -m mmwave_fusion.sim.downtown DIR``.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

from ..fiveg import BaseStation
from ..geo import GeodeticPosition
from ..ins import ImuErrorModel
from .scene import Building, Scene, save_scene
from .trajectory import DynamicsProfile

ORIGIN = GeodeticPosition(np.radians(45.42), np.radians(-75.70), 70.0)

# centre, tower radius, wall radius, wall vertex azimuths (deg), BS azimuth (deg)
PLAZAS = (
    ((0.0, 0.0), 24.0, 80.0, (270, 325, 15, 90, 150, 200, 235), 125.0),
    ((450.0, 0.0), 24.0, 80.0, (270, 320, 20, 90, 145, 195, 230), 125.0),
    ((900.0, 0.0), 24.0, 80.0, (270, 330, 25, 90, 140, 190, 240), 125.0),
)
STREETS_Y = (-300.0, 0.0, 220.0, 450.0)
STREETS_X = (-330.0, 225.0, 675.0, 1230.0)
STREET_WIDTH = 20.0
BS_HEIGHT = 10.0

_DEG = np.pi / 180.0

# automotive MEMS grade: 0.2 deg/sqrt(h) ARW, ~10 deg/h and ~2 mg turn-on biases
CONSUMER_IMU = ImuErrorModel(
    accel_noise=(0.002, 0.002, 0.002),
    gyro_noise=(0.2 * _DEG / 60,) * 3,
    accel_bias=(0.02, -0.015, 0.01),
    gyro_bias=(10 * _DEG / 3600, -8 * _DEG / 3600, 15 * _DEG / 3600),
    accel_drift=(0.005, 0.005, 0.005),
    gyro_drift=(5 * _DEG / 3600,) * 3,
)
# same white noise, no bias: the filter's process model is then exact
WHITE_IMU = ImuErrorModel(accel_noise=CONSUMER_IMU.accel_noise, gyro_noise=CONSUMER_IMU.gyro_noise)


def polar(c, r, az_deg):
    """Point at range ``r`` and azimuth ``az_deg`` (clockwise from north) from ``c``."""
    a = np.radians(az_deg)
    return np.array([c[0] + r * np.sin(a), c[1] + r * np.cos(a)])


def plaza(tag, centre, tower_radius, wall_radius, vertex_az, *, gap=14.0, depth=15.0,
          height=30.0, tower_height=40.0, tower_rotation=22.5) -> list[Building]:
    """Octagonal tower plus one slab behind each edge of the wall polygon."""
    out = [Building(tag + "c", [polar(centre, tower_radius, tower_rotation + 45 * k) for k in range(8)],
                    tower_height)]
    v = [polar(centre, wall_radius, a) for a in vertex_az]
    for i in range(len(v)):
        a, b = v[i], v[(i + 1) % len(v)]
        u = (b - a) / np.linalg.norm(b - a)
        n = np.array([u[1], -u[0]])
        if n @ ((a + b) / 2 - np.asarray(centre)) < 0:
            n = -n
        a2, b2 = a + gap / 2 * u, b - gap / 2 * u
        out.append(Building(f"{tag}s{i}", [a2, b2, b2 + depth * n, a2 + depth * n], height))
    return out


def _box(tag, x0, y0, x1, y1, h) -> Building:
    return Building(tag, [[x0, y0], [x1, y0], [x1, y1], [x0, y1]], h)


def _near_plaza(cx, cy) -> bool:
    for c, _, r, _, _ in PLAZAS:
        if np.hypot(cx - c[0], cy - c[1]) < r + 40:
            return True
        if abs(cy - c[1]) < r + 20 and abs(cx - c[0]) < r + 20:
            return True
    return False


def build_downtown(seed: int = 7) -> Scene:
    rng = np.random.default_rng(seed)
    buildings, stations = [], []
    for i, (c, rc, r, vaz, baz) in enumerate(PLAZAS):
        buildings += plaza(f"p{i}", c, rc, r, vaz)
        stations.append(BaseStation(f"gP{i}", tuple(map(float, polar(c, 62.0, baz))) + (BS_HEIGHT,)))
        # covers the boulevard just past the plaza exit
        stations.append(BaseStation(f"gE{i}", (c[0] + 110.0, 8.0, BS_HEIGHT)))
    w = STREET_WIDTH
    for j in range(len(STREETS_Y) - 1):
        for i in range(len(STREETS_X) - 1):
            x0, x1 = STREETS_X[i] + w / 2, STREETS_X[i + 1] - w / 2
            y0, y1 = STREETS_Y[j] + w / 2, STREETS_Y[j + 1] - w / 2
            x, k = x0, 0
            # street-front buildings on both sides of the block, separated by alleys
            while x < x1 - 10:
                xe = min(x + rng.uniform(35, 70), x1)
                for ya, yb, side in ((y0, y0 + rng.uniform(30, 45), "s"), (y1 - rng.uniform(30, 45), y1, "n")):
                    setback = rng.uniform(0, 2.5)
                    fy0 = ya + (setback if side == "s" else 0.0)
                    fy1 = yb - (setback if side == "n" else 0.0)
                    if _near_plaza((x + xe) / 2, (fy0 + fy1) / 2):
                        continue
                    buildings.append(_box(f"b{j}{i}{k}{side}", x, fy0, xe, fy1, float(rng.integers(15, 45))))
                k += 1
                x = xe + rng.uniform(4, 8)
    for x in (-260, 225, 675, 1150):
        stations.append(BaseStation(f"gB{x}", (float(x), -8.0, BS_HEIGHT)))
    for x in range(-300, 1250, 250):
        stations.append(BaseStation(f"gN{x}", (float(x), 212.0, BS_HEIGHT)))
    for x in range(-300, 1250, 250):
        stations.append(BaseStation(f"gS{x}", (float(x), -292.0, BS_HEIGHT)))
    for x in (225, 675):
        for y in (110, -150):
            stations.append(BaseStation(f"gV{x}_{y}", (x + 8.0, float(y), BS_HEIGHT)))
    scene = Scene(ORIGIN, buildings, stations, name="downtown")
    scene.validate()
    return scene


def high_outage_route(plaza_speed: float = 3.5):
    """Boulevard drive that loops through each plaza behind its tower.

    Returns (waypoints, profile). Each plaza pass is a LoS outage of about 25 s
    from the serving BS, bridged only by reflections off the plaza walls.
    """
    wp = [(-320.0, 0.0)]
    for c, *_ in PLAZAS:
        wp.append((c[0] - 95.0, 0.0))
        wp += [tuple(map(float, polar(c, 42.0, a))) for a in (270, 300, 330, 0, 30, 60, 90)]
        wp.append((c[0] + 95.0, 0.0))
    wp.append((1220.0, 0.0))

    def inside(p):
        return any(np.hypot(p[0] - c[0], p[1] - c[1]) < 90.0 for c, *_ in PLAZAS)

    speeds = [plaza_speed if inside(a) and inside(b) else 10.0 for a, b in zip(wp[:-1], wp[1:])]
    profile = DynamicsProfile(cruise_speed=10.0, turn_speed=plaza_speed, turn_radius=12.0,
                              segment_speeds=tuple(speeds))
    return wp, profile


def low_outage_route():
    """Street-grid loop with two stops; the serving BS is almost always in view."""
    wp = [(-320.0, 220.0), (225.0, 220.0), (225.0, -300.0), (675.0, -300.0), (675.0, 220.0), (1220.0, 220.0)]
    return wp, DynamicsProfile(cruise_speed=10.0, turn_speed=5.0, stops=((2, 5.0), (4, 3.0)))


def nees_route():
    """Two-minute drive used for the consistency Monte Carlo."""
    wp = [(-320.0, 220.0), (225.0, 220.0), (225.0, -300.0)]
    return wp, DynamicsProfile(cruise_speed=10.0, turn_speed=5.0)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0] if argv else ".")
    out.mkdir(parents=True, exist_ok=True)
    save_scene(build_downtown(), out / "downtown.yaml")
    print(out / "downtown.yaml")


if __name__ == "__main__":
    main()
