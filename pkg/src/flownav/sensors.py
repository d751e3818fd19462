"""Ray-traced obstacle sensing over a 9-elevation x 5-azimuth fan.

Both angle sets span [-pi, pi] uniformly; every (elevation, azimuth) pair
defines one body-frame ray, 45 in total. Rays are rotated by the UAV's
(yaw, pitch) into the world frame and intersected with the obstacle boxes and
the ground plane y = 0. The domain's other faces are out-of-bounds surfaces,
not ray obstacles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, ray_box_intersect, rotation_matrix

N_ELEVATIONS = 9
N_AZIMUTHS = 5
N_RAYS = N_ELEVATIONS * N_AZIMUTHS
FORWARD_RAY = (N_ELEVATIONS // 2) * N_AZIMUTHS + N_AZIMUTHS // 2  # theta=0, phi=0


@dataclass
class RayFan:
    """Fixed fan of sensing rays in the UAV body frame."""

    max_range: float = 2.0
    elevations: np.ndarray = field(default_factory=lambda: np.linspace(-math.pi, math.pi, N_ELEVATIONS))
    azimuths: np.ndarray = field(default_factory=lambda: np.linspace(-math.pi, math.pi, N_AZIMUTHS))

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        dirs = np.empty((N_RAYS, 3))
        offsets = np.empty((N_RAYS, 2))
        for i, th in enumerate(self.elevations):
            for j, ph in enumerate(self.azimuths):
                ct = math.cos(th)
                dirs[i * N_AZIMUTHS + j] = (ct * math.cos(ph), ct * math.sin(ph), math.sin(th))
                offsets[i * N_AZIMUTHS + j] = (ph, th)
        self.body_dirs = dirs
        self.offsets = offsets  # (azimuth, elevation) per ray


@dataclass
class SensorReading:
    distances: np.ndarray  # (45,), max_range means no hit
    forward_free: bool
    best_direction: tuple[float, float] | None  # (dphi, dtheta), only when blocked


def _ground_distance(origin, direction) -> float | None:
    oy, dy = origin[1], direction[1]
    if dy == 0.0:
        return None
    t = -oy / dy
    if t < 0.0:
        return None
    return t


def scan(position, psi: float, theta: float, obstacles: list[Box],
         fan: RayFan) -> SensorReading:
    """Trace the full fan from ``position`` with the UAV at (psi, theta)."""
    rot = rotation_matrix(psi, theta)
    world_dirs = fan.body_dirs @ rot.T
    distances = np.full(N_RAYS, fan.max_range)
    origin = np.asarray(position, dtype=float)
    for r in range(N_RAYS):
        d = fan.max_range
        direction = world_dirs[r]
        for box in obstacles:
            hit = ray_box_intersect(origin, direction, box)
            if hit is not None and hit < d:
                d = hit
        g = _ground_distance(origin, direction)
        if g is not None and g < d:
            d = g
        distances[r] = d

    forward_free = distances[FORWARD_RAY] >= fan.max_range
    best = None
    if not forward_free:
        max_clear = distances.max()
        candidates = np.flatnonzero(distances == max_clear)
        key = [
            (abs(fan.offsets[r, 0]) + abs(fan.offsets[r, 1]), r)
            for r in candidates
        ]
        _, r_best = min(key)
        best = (float(fan.offsets[r_best, 0]), float(fan.offsets[r_best, 1]))
    return SensorReading(distances=distances, forward_free=forward_free, best_direction=best)
