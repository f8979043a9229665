"""Planar rays and axis-aligned extent clipping.

Map extents are the rectangle [0, X] x [0, Y]. Rays are parameterized as
s + v*t with a unit direction v, so t is metric distance along the ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .validation import as_point

# Ray2 directions must be unit length to keep t in meters.
UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class Ray2:
    """A ray with origin `origin` and unit direction `direction`."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = as_point(self.origin)
        d = as_point(self.direction)
        if abs(float(d @ d) - 1.0) > 2.0 * UNIT_NORM_TOL:
            raise InvalidInputError(f"ray direction must be unit length, got |v|^2 = {d @ d}")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def from_angle(cls, origin, angle: float) -> "Ray2":
        return cls(as_point(origin), np.array([math.cos(angle), math.sin(angle)]))

    def point_at(self, t: float) -> np.ndarray:
        return self.origin + self.direction * t


def exit_distance(origin, direction, extent_x: float, extent_y: float) -> float:
    """Distance from `origin` to where the ray leaves [0,X]x[0,Y].

    The origin must lie inside (or on the boundary of) the extent. Vectorized:
    origin/direction may be (n, 2) arrays, returning an (n,) array.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    squeeze = o.ndim == 1
    o = np.atleast_2d(o)
    d = np.atleast_2d(d)
    hi = np.array([extent_x, extent_y])
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - o) / d
        t_lo = (0.0 - o) / d
    t_far = np.where(d > 0, t_hi, np.where(d < 0, t_lo, np.inf))
    t_exit = np.min(t_far, axis=1)
    t_exit = np.maximum(t_exit, 0.0)
    return float(t_exit[0]) if squeeze else t_exit


def segment_inside(origin, direction, extent_x: float, extent_y: float):
    """Entry/exit parameters of a ray against [0,X]x[0,Y] (slab method).

    Returns (t_enter, t_exit); the ray misses the box when t_enter > t_exit.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t_enter, t_exit = 0.0, np.inf
    for k, hi in enumerate((extent_x, extent_y)):
        if d[k] == 0.0:
            if not (0.0 <= o[k] <= hi):
                return np.inf, -np.inf
            continue
        t0 = (0.0 - o[k]) / d[k]
        t1 = (hi - o[k]) / d[k]
        if t0 > t1:
            t0, t1 = t1, t0
        t_enter = max(t_enter, t0)
        t_exit = min(t_exit, t1)
    return t_enter, t_exit
