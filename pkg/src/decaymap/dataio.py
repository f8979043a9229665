"""Carmen log ingestion, patch extraction, and scan-set text files.

Carmen logs are line-oriented; we consume FLASER records:

    FLASER n r_1 ... r_n x y theta odom_x odom_y odom_theta [ts host ts]

Poses are the SLAM-corrected laser poses, taken as ground truth. Beams are
assumed to fan over a 180-degree field of view centered on the heading
(increment pi/n, or pi/(n-1) for odd counts, matching the 181/361-beam
scanner convention) unless PARAM laser_front_laser_fov /
laser_front_laser_resolution lines say otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CarmenParseError, InvalidInputError
from .forward import LidarRay, RayOutcome, ScanSet, SensorLimits
from .geometry import Ray2, segment_inside

__all__ = [
    "RobotPose",
    "RawScan",
    "PatchSpec",
    "parse_carmen",
    "format_carmen",
    "scans_to_rays",
    "extract_patch",
    "densest_window_corner",
    "save_scans",
    "load_scans",
    "format_scans",
    "parse_scans",
]


@dataclass(frozen=True)
class RobotPose:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        if not all(map(math.isfinite, (self.x, self.y, self.heading))):
            raise InvalidInputError(f"pose fields must be finite: {self}")


@dataclass(frozen=True)
class RawScan:
    """One FLASER record: pose, ranges, and the beam fan geometry."""

    pose: RobotPose
    ranges: tuple
    start_angle: float
    angle_increment: float
    timestamp: float = 0.0


@dataclass(frozen=True)
class PatchSpec:
    """A rectangular map patch; anchor by corner or center, else the densest
    window over the return endpoints is chosen automatically."""

    corner: tuple | None = None
    center: tuple | None = None
    width: float = 10.0
    height: float = 10.0
    max_rays: int = 10_000

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError("patch width and height must be positive")
        if self.corner is not None and self.center is not None:
            raise InvalidInputError("give either corner or center, not both")


def parse_carmen(stream) -> list[RawScan]:
    """Parse FLASER records from a text stream or string.

    ODOM, comment, and unknown lines are skipped. Malformed FLASER lines
    raise CarmenParseError with the 1-based line number.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = stream.read().splitlines()

    fov = math.pi
    resolution = None
    scans: list[RawScan] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        tag = tokens[0]
        if tag == "PARAM" and len(tokens) >= 3:
            name = tokens[1].lower()
            if name == "laser_front_laser_fov":
                fov = math.radians(float(tokens[2]))
            elif name == "laser_front_laser_resolution":
                resolution = math.radians(float(tokens[2]))
            continue
        if tag != "FLASER":
            continue
        try:
            n = int(tokens[1])
        except (IndexError, ValueError) as exc:
            raise CarmenParseError(f"bad reading count in {line!r}", lineno) from exc
        if n < 0 or len(tokens) < 2 + n + 6:
            raise CarmenParseError(
                f"expected {n} ranges plus 6 pose fields, got {len(tokens) - 2} values", lineno
            )
        try:
            ranges = tuple(float(v) for v in tokens[2 : 2 + n])
            px, py, pth = (float(v) for v in tokens[2 + n : 5 + n])
            # odometry pose tokens[5+n:8+n] is parsed for validity, unused
            _ = tuple(float(v) for v in tokens[5 + n : 8 + n])
        except ValueError as exc:
            raise CarmenParseError("non-numeric token in FLASER record", lineno) from exc
        if any(r < 0 for r in ranges):
            raise CarmenParseError("negative range reading", lineno)
        ts = 0.0
        if len(tokens) > 8 + n:
            try:
                ts = float(tokens[8 + n])
            except ValueError:
                ts = 0.0
        if resolution is not None:
            inc = resolution
        elif n % 2 == 1 and n > 1:
            inc = fov / (n - 1)
        else:
            inc = fov / max(n, 1)
        scans.append(RawScan(RobotPose(px, py, pth), ranges, -fov / 2.0, inc, ts))
    return scans


def format_carmen(scans: list[RawScan], hostname: str = "decaymap") -> str:
    """Render RawScans back to FLASER lines (numeric payload round-trips)."""
    lines = []
    for s in scans:
        parts = ["FLASER", str(len(s.ranges))]
        parts += [repr(float(r)) for r in s.ranges]
        parts += [repr(float(v)) for v in (s.pose.x, s.pose.y, s.pose.heading)]
        parts += [repr(float(v)) for v in (s.pose.x, s.pose.y, s.pose.heading)]
        parts += [repr(float(s.timestamp)), hostname, repr(float(s.timestamp))]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def scans_to_rays(raw: list[RawScan], limits: SensorLimits) -> ScanSet:
    """Expand raw scans into classified rays in world coordinates.

    Ranges at or beyond r_max become super, at or below r_min become sub,
    everything between is a return at the measured radius.
    """
    rays = []
    for s in raw:
        for k, rng in enumerate(s.ranges):
            angle = s.pose.heading + s.start_angle + k * s.angle_increment
            ray = Ray2.from_angle((s.pose.x, s.pose.y), angle)
            if rng >= limits.r_max:
                outcome = RayOutcome.super_()
            elif rng <= limits.r_min:
                outcome = RayOutcome.sub()
            else:
                outcome = RayOutcome.returned(rng)
            rays.append(LidarRay(ray, outcome))
    return ScanSet(tuple(rays), limits)


def densest_window_corner(scans: ScanSet, patch: PatchSpec) -> tuple:
    """Corner of the width x height window holding the most return endpoints.

    Grid search over a 1 m endpoint histogram; deterministic tie-breaking by
    scan order of the histogram bins.
    """
    pts = []
    for lr in scans.rays:
        if lr.outcome.is_return:
            pts.append(lr.ray.origin + lr.ray.direction * lr.outcome.r)
        else:
            pts.append(lr.ray.origin)
    if not pts:
        return (0.0, 0.0)
    pts = np.asarray(pts)
    lo = np.floor(pts.min(axis=0)) - 1.0
    hi = np.ceil(pts.max(axis=0)) + 1.0
    nx = max(int(hi[0] - lo[0]), 1)
    ny = max(int(hi[1] - lo[1]), 1)
    hist, _, _ = np.histogram2d(
        pts[:, 0], pts[:, 1], bins=(nx, ny), range=((lo[0], hi[0]), (lo[1], hi[1]))
    )
    wx = max(int(round(patch.width)), 1)
    wy = max(int(round(patch.height)), 1)
    best, best_idx = -1.0, (0, 0)
    csum = hist.cumsum(axis=0).cumsum(axis=1)
    padded = np.zeros((nx + 1, ny + 1))
    padded[1:, 1:] = csum
    for i in range(max(nx - wx + 1, 1)):
        for j in range(max(ny - wy + 1, 1)):
            i2, j2 = min(i + wx, nx), min(j + wy, ny)
            count = padded[i2, j2] - padded[i, j2] - padded[i2, j] + padded[i, j]
            if count > best:
                best, best_idx = count, (i, j)
    return (lo[0] + best_idx[0], lo[1] + best_idx[1])


def extract_patch(scans: ScanSet, patch: PatchSpec) -> ScanSet:
    """Patch-local scan set: rays with origin inside the patch, translated
    so the patch corner is (0, 0), clipped at the patch boundary.

    A return beyond the boundary becomes super at the boundary; rays whose
    origin lies outside the patch are excluded. At most max_rays rays are
    kept, in log order.
    """
    if patch.corner is not None:
        corner = (float(patch.corner[0]), float(patch.corner[1]))
    elif patch.center is not None:
        corner = (patch.center[0] - patch.width / 2.0, patch.center[1] - patch.height / 2.0)
    else:
        corner = densest_window_corner(scans, patch)
    W, H = patch.width, patch.height
    kept = []
    for lr in scans.rays:
        o = lr.ray.origin - np.asarray(corner)
        if not (0.0 <= o[0] < W and 0.0 <= o[1] < H):
            continue
        local = Ray2(o, lr.ray.direction)
        outcome = lr.outcome
        if outcome.is_return:
            _, t_exit = segment_inside(o, lr.ray.direction, W, H)
            if outcome.r > t_exit:
                outcome = RayOutcome.super_()
        kept.append(LidarRay(local, outcome))
        if len(kept) >= patch.max_rays:
            break
    return ScanSet(tuple(kept), scans.limits)


# --- scan-set text files ----------------------------------------------------
# One header line "SCANS r_min r_max extent_x extent_y", then one line per
# ray: tag S (sub), R (return, with radius), or P (super), followed by the
# origin and direction components. Floats use repr, so round-trips are
# bit-exact.

_TAGS = {"sub": "S", "return": "R", "super": "P"}
_KINDS = {v: k for k, v in _TAGS.items()}


def format_scans(scans: ScanSet, extent: tuple) -> str:
    lines = [
        "SCANS "
        f"{float(scans.limits.r_min)!r} {float(scans.limits.r_max)!r} "
        f"{float(extent[0])!r} {float(extent[1])!r}"
    ]
    for lr in scans.rays:
        o, d = lr.ray.origin, lr.ray.direction
        parts = [
            _TAGS[lr.outcome.kind],
            repr(float(o[0])), repr(float(o[1])),
            repr(float(d[0])), repr(float(d[1])),
        ]
        if lr.outcome.is_return:
            parts.append(repr(float(lr.outcome.r)))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def parse_scans(text: str) -> tuple[ScanSet, tuple]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("SCANS"):
        raise InvalidInputError("scan file must start with a SCANS header")
    head = lines[0].split()
    if len(head) != 5:
        raise InvalidInputError(f"malformed SCANS header: {lines[0]!r}")
    limits = SensorLimits(float(head[1]), float(head[2]))
    extent = (float(head[3]), float(head[4]))
    rays = []
    for lineno, ln in enumerate(lines[1:], start=2):
        if not ln.strip():
            continue
        parts = ln.split()
        tag = parts[0]
        if tag not in _KINDS:
            raise InvalidInputError(f"line {lineno}: unknown ray tag {tag!r}")
        if tag == "R":
            if len(parts) != 6:
                raise InvalidInputError(f"line {lineno}: return rays need 6 fields")
            outcome = RayOutcome.returned(float(parts[5]))
        else:
            if len(parts) != 5:
                raise InvalidInputError(f"line {lineno}: no-return rays need 5 fields")
            outcome = RayOutcome(_KINDS[tag])
        ray = Ray2(
            np.array([float(parts[1]), float(parts[2])]),
            np.array([float(parts[3]), float(parts[4])]),
        )
        rays.append(LidarRay(ray, outcome))
    return ScanSet(tuple(rays), limits), extent


def save_scans(scans: ScanSet, extent: tuple, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_scans(scans, extent))


def load_scans(path) -> tuple[ScanSet, tuple]:
    with open(path) as fh:
        return parse_scans(fh.read())
