"""Closed-form measurement model for spectral decay maps.

A lidar measurement is a ray plus an outcome: a return at radius r, or one
of the two no-return tags (`sub` for reflections before r_min, `super` for
rays exceeding r_max). The survival function N(r) = exp(-S(r)), with S the
path integral of the decay field, yields the mixed density over
{sub, [r_min, r_max], super}:

    P(sub)   = 1 - N(r_min)
    p(r)     = lambda(r) * N(r)
    P(super) = N(r_max)

which integrates/sums to one. Log-likelihoods floor the decay rate at
LAMBDA_FLOOR so they never return -inf, and clip every ray at the map
boundary before integrating (a return beyond the boundary is an ingestion
error). All operations are pure functions of immutable inputs and safe to
call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import InvalidInputError
from .geometry import Ray2, exit_distance
from .spectral import SpectralMap, decay_rate_on_ray

__all__ = [
    "SensorLimits",
    "RayOutcome",
    "LidarRay",
    "ScanSet",
    "path_integral",
    "survival",
    "return_density",
    "prob_sub",
    "prob_super",
    "ray_log_likelihood",
    "scan_log_likelihood",
    "DEFAULT_R_MIN",
    "DEFAULT_R_MAX",
]

# Typical limits for the SICK scanners behind the classic indoor logs.
DEFAULT_R_MIN = 0.04
DEFAULT_R_MAX = 80.0

_BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class SensorLimits:
    """Measurable range interval [r_min, r_max] of the scanner."""

    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX

    def __post_init__(self):
        if not (0.0 <= self.r_min < self.r_max < math.inf):
            raise InvalidInputError(
                f"sensor limits must satisfy 0 <= r_min < r_max < inf, "
                f"got [{self.r_min}, {self.r_max}]"
            )


@dataclass(frozen=True)
class RayOutcome:
    """Tagged measurement outcome: 'sub', 'super', or 'return' with radius."""

    kind: str
    r: float = math.nan

    SUB = "sub"
    RETURN = "return"
    SUPER = "super"

    def __post_init__(self):
        if self.kind not in (self.SUB, self.RETURN, self.SUPER):
            raise InvalidInputError(f"unknown outcome kind {self.kind!r}")
        if self.kind == self.RETURN and not (np.isfinite(self.r) and self.r >= 0):
            raise InvalidInputError(f"return radius must be finite and >= 0, got {self.r}")

    @classmethod
    def sub(cls) -> "RayOutcome":
        return cls(cls.SUB)

    @classmethod
    def super_(cls) -> "RayOutcome":
        return cls(cls.SUPER)

    @classmethod
    def returned(cls, r: float) -> "RayOutcome":
        return cls(cls.RETURN, float(r))

    @property
    def is_return(self) -> bool:
        return self.kind == self.RETURN


_KIND_CODE = {RayOutcome.SUB: _core.KIND_SUB,
              RayOutcome.RETURN: _core.KIND_RETURN,
              RayOutcome.SUPER: _core.KIND_SUPER}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass(frozen=True)
class LidarRay:
    """One measurement: geometry plus outcome."""

    ray: Ray2
    outcome: RayOutcome


@dataclass(frozen=True)
class ScanSet:
    """An ordered collection of measurements sharing one sensor-limit pair."""

    rays: tuple
    limits: SensorLimits = field(default_factory=SensorLimits)

    def __post_init__(self):
        object.__setattr__(self, "rays", tuple(self.rays))
        for k, lr in enumerate(self.rays):
            out = lr.outcome
            if out.is_return and not (
                self.limits.r_min - _BOUNDARY_TOL <= out.r <= self.limits.r_max + _BOUNDARY_TOL
            ):
                raise InvalidInputError(
                    f"ray {k}: return radius {out.r} outside limits "
                    f"[{self.limits.r_min}, {self.limits.r_max}]"
                )
        object.__setattr__(self, "_arrays", None)

    def __len__(self) -> int:
        return len(self.rays)

    def to_arrays(self):
        """(origins (K,2), dirs (K,2), kinds (K,) int, radii (K,)) views."""
        cached = object.__getattribute__(self, "_arrays")
        if cached is None:
            K = len(self.rays)
            origins = np.empty((K, 2))
            dirs = np.empty((K, 2))
            kinds = np.empty(K, dtype=np.int8)
            radii = np.full(K, np.nan)
            for k, lr in enumerate(self.rays):
                origins[k] = lr.ray.origin
                dirs[k] = lr.ray.direction
                kinds[k] = _KIND_CODE[lr.outcome.kind]
                if lr.outcome.is_return:
                    radii[k] = lr.outcome.r
            for arr in (origins, dirs, kinds, radii):
                arr.setflags(write=False)
            cached = (origins, dirs, kinds, radii)
            object.__setattr__(self, "_arrays", cached)
        return cached

    @classmethod
    def from_arrays(cls, origins, dirs, kinds, radii, limits: SensorLimits) -> "ScanSet":
        rays = []
        for o, d, k, r in zip(origins, dirs, kinds, radii):
            outcome = RayOutcome(_CODE_KIND[int(k)], float(r) if int(k) == _core.KIND_RETURN else math.nan)
            rays.append(LidarRay(Ray2(o, d), outcome))
        return cls(tuple(rays), limits)


def _check_r(r) -> float:
    r = float(r)
    if not (np.isfinite(r) and r >= 0):
        raise InvalidInputError(f"integration limit must be finite and >= 0, got {r}")
    return r


def path_integral(m: SpectralMap, ray: Ray2, r: float) -> float:
    """S(s, v, r): the decay field integrated from 0 to r along the ray.

    The caller is responsible for keeping [s, s + v*r] inside the map
    extent; outside it the periodic extension is integrated.
    """
    r = _check_r(r)
    S = _core.path_integral_batch(
        m.coeffs, m.extent_x, m.extent_y,
        ray.origin, ray.direction, [r], W=m.pair_weight_table(),
    )[0]
    return max(float(S), 0.0)


def survival(m: SpectralMap, ray: Ray2, r: float) -> float:
    """N(r) = exp(-S(r)); the probability the ray covers at least r."""
    return math.exp(-path_integral(m, ray, r))


def return_density(m: SpectralMap, ray: Ray2, r: float, limits: SensorLimits) -> float:
    """Measurement density p(r) = lambda(r) * N(r) for r within the limits."""
    r = float(r)
    if not (limits.r_min <= r <= limits.r_max):
        raise InvalidInputError(
            f"return radius {r} outside sensor limits [{limits.r_min}, {limits.r_max}]"
        )
    lam = float(decay_rate_on_ray(m, ray, r))
    return lam * survival(m, ray, r)


def prob_sub(m: SpectralMap, ray: Ray2, limits: SensorLimits) -> float:
    """P(sub) = 1 - N(r_min), computed as -expm1(-S) to keep precision."""
    S = path_integral(m, ray, limits.r_min)
    return float(-math.expm1(-S))


def prob_super(m: SpectralMap, ray: Ray2, limits: SensorLimits) -> float:
    """P(super) = N(r_max)."""
    return survival(m, ray, limits.r_max)


def _validate_scan_geometry(m: SpectralMap, origins, dirs, kinds, radii):
    X, Y = m.extent_x, m.extent_y
    if np.any(origins[:, 0] < -_BOUNDARY_TOL) or np.any(origins[:, 0] > X + _BOUNDARY_TOL) \
            or np.any(origins[:, 1] < -_BOUNDARY_TOL) or np.any(origins[:, 1] > Y + _BOUNDARY_TOL):
        raise InvalidInputError("ray origins must lie inside the map extent")
    t_exit = exit_distance(origins, dirs, X, Y)
    is_ret = kinds == _core.KIND_RETURN
    if np.any(radii[is_ret] > t_exit[is_ret] + _BOUNDARY_TOL):
        bad = np.flatnonzero(is_ret)[np.argmax(radii[is_ret] - t_exit[is_ret])]
        raise InvalidInputError(
            f"ray {bad}: return radius {radii[bad]} beyond the map boundary "
            f"(exit at {t_exit[bad]}); clip scans at ingestion"
        )


def ray_log_likelihood(m: SpectralMap, z: LidarRay, limits: SensorLimits) -> float:
    """Log of the mixed density of a single measurement (never -inf)."""
    scans = ScanSet((z,), limits)
    return scan_log_likelihood(m, scans)


def scan_log_likelihood(m: SpectralMap, scans: ScanSet) -> float:
    """Joint log-likelihood: sum of per-ray mixed-density logs."""
    if len(scans) == 0:
        return 0.0
    origins, dirs, kinds, radii = scans.to_arrays()
    _validate_scan_geometry(m, origins, dirs, kinds, radii)
    per_ray, _, _ = _core.scan_eval(
        m.coeffs, m.extent_x, m.extent_y,
        origins, dirs, kinds, radii,
        scans.limits.r_min, scans.limits.r_max,
        W=m.pair_weight_table(),
    )
    return float(np.sum(per_ray))
