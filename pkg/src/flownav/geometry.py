"""Axis-aligned boxes, ray intersection, and angle/frame helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = (a + math.pi) % TWO_PI - math.pi
    if w == -math.pi:
        w = math.pi
    return w


def rotation_matrix(psi: float, theta: float) -> np.ndarray:
    """World-from-body rotation for yaw ``psi`` (x-y plane) and pitch ``theta``.

    The body forward axis e_x maps to (cos t cos p, cos t sin p, sin t),
    matching the kinematic heading convention of the dynamics module.
    """
    cp, sp = math.cos(psi), math.sin(psi)
    ct, st = math.cos(theta), math.sin(theta)
    r_yaw = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    r_pitch = np.array([[ct, 0.0, -st], [0.0, 1.0, 0.0], [st, 0.0, ct]])
    return r_yaw @ r_pitch


def heading_vector(psi: float, theta: float) -> np.ndarray:
    ct = math.cos(theta)
    return np.array([ct * math.cos(psi), ct * math.sin(psi), math.sin(theta)])


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by opposite corners (lo <= hi componentwise)."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"box lo must not exceed hi: {self.lo} / {self.hi}")

    def contains(self, p) -> bool:
        return all(l <= c <= h for c, l, h in zip(p, self.lo, self.hi))

    def surface_distance(self, p) -> float:
        """Euclidean distance from ``p`` to the box surface; 0 inside or on it."""
        d2 = 0.0
        for c, l, h in zip(p, self.lo, self.hi):
            if c < l:
                d2 += (l - c) ** 2
            elif c > h:
                d2 += (c - h) ** 2
        return math.sqrt(d2)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(lo=tuple(float(v) for v in d["lo"]), hi=tuple(float(v) for v in d["hi"]))


def ray_box_intersect(origin, direction, box: Box) -> float | None:
    """Entry distance of a ray into an axis-aligned box (slab method).

    Returns the smallest nonnegative parameter t with origin + t*direction on
    or inside the box, or None when the ray misses. An origin inside the box
    yields 0. Directions parallel to a slab are checked against the slab
    bounds instead of divided through.
    """
    tmin = -math.inf
    tmax = math.inf
    for o, d, lo, hi in zip(origin, direction, box.lo, box.hi):
        if d == 0.0:
            if o < lo or o > hi:
                return None
            continue
        t0 = (lo - o) / d
        t1 = (hi - o) / d
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tmin:
            tmin = t0
        if t1 < tmax:
            tmax = t1
        if tmin > tmax:
            return None
    if tmax < 0.0:
        return None
    return max(tmin, 0.0)
