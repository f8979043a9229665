"""Decay-rate grid maps: the baseline and ground-truth representation.

Each cell accumulates the number of ray reflections inside it (`hits`) and
the total distance traveled by all rays within it (`path_len`); its decay
rate is hits / path_len once traversed, and the cell counts as observed
exactly when path_len > 0. Row index runs along x, column index along y,
cells are squares with a common edge length, and cell intervals are
half-open [lo, hi) so boundary points credit the next cell deterministically.

Ray traversal parameterizes the ray by metric distance t, merges the sorted
x- and y-boundary crossings, and assigns each resulting segment to the cell
containing its midpoint. Segment lengths telescope, so they sum exactly to
the clipped ray length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import InvalidInputError
from .forward import ScanSet, SensorLimits
from .geometry import Ray2, segment_inside

__all__ = [
    "GridGeometry",
    "CellSegment",
    "GridDecayMap",
    "trace_ray",
    "build_grid",
    "grid_scan_log_likelihood",
    "sample_grid_as_field",
    "save_grid_map",
    "load_grid_map",
    "format_grid_map",
    "parse_grid_map",
]


@dataclass(frozen=True)
class GridGeometry:
    """Grid placement: rows cells along x, cols along y, square cells."""

    rows: int
    cols: int
    cell_edge: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("grid must have at least one cell per axis")
        if not (np.isfinite(self.cell_edge) and self.cell_edge > 0):
            raise InvalidInputError(f"cell edge must be positive, got {self.cell_edge}")

    @property
    def extent(self) -> tuple:
        return (self.rows * self.cell_edge, self.cols * self.cell_edge)

    def cell_of(self, x: float, y: float) -> tuple:
        ix = int(math.floor((x - self.origin[0]) / self.cell_edge))
        iy = int(math.floor((y - self.origin[1]) / self.cell_edge))
        return ix, iy

    def midpoints(self):
        """Cell midpoint coordinate axes (x of each row, y of each column)."""
        xs = self.origin[0] + (np.arange(self.rows) + 0.5) * self.cell_edge
        ys = self.origin[1] + (np.arange(self.cols) + 0.5) * self.cell_edge
        return xs, ys


@dataclass(frozen=True)
class CellSegment:
    """One ray/cell intersection: indices, entry/exit distance, length."""

    ix: int
    iy: int
    t_enter: float
    t_exit: float

    @property
    def length(self) -> float:
        return self.t_exit - self.t_enter


class GridDecayMap:
    """Raster of per-cell decay rates with hit/length accumulators."""

    def __init__(self, geometry: GridGeometry):
        self.geometry = geometry
        self.hits = np.zeros((geometry.rows, geometry.cols))
        self.path_len = np.zeros((geometry.rows, geometry.cols))

    @property
    def rows(self) -> int:
        return self.geometry.rows

    @property
    def cols(self) -> int:
        return self.geometry.cols

    @property
    def observed(self) -> np.ndarray:
        return self.path_len > 0.0

    def decay(self) -> np.ndarray:
        """Per-cell decay rates; unobserved cells are 0."""
        out = np.zeros_like(self.hits)
        mask = self.observed
        out[mask] = self.hits[mask] / self.path_len[mask]
        return out

    def observed_mask(self, count_hits_only: bool = False) -> np.ndarray:
        """Observation mask; `count_hits_only` flips to the stricter reading
        that a cell must contain at least one reflection."""
        return (self.hits > 0.0) if count_hits_only else self.observed

    @classmethod
    def from_decay(cls, decay, cell_edge: float, origin=(0.0, 0.0)) -> "GridDecayMap":
        """Build a map with prescribed decay rates (all cells observed)."""
        decay = np.asarray(decay, dtype=float)
        if decay.ndim != 2 or np.any(decay < 0) or not np.all(np.isfinite(decay)):
            raise InvalidInputError("decay raster must be 2-D, finite, and nonnegative")
        g = cls(GridGeometry(decay.shape[0], decay.shape[1], cell_edge, tuple(origin)))
        g.path_len[:] = 1.0
        g.hits[:] = decay
        return g


def merge_crossings(o, d, extent_x, extent_y, edge_x, edge_y, r: float) -> np.ndarray:
    """Sorted cell-boundary crossing distances of a clipped ray.

    `o` is relative to the lattice origin. Includes the clip endpoints, so
    consecutive pairs delimit the traversal segments and their lengths
    telescope to the clipped ray length exactly.
    """
    t0, t1 = segment_inside(o, d, extent_x, extent_y)
    t0 = max(t0, 0.0)
    t1 = min(t1, r)
    if not t1 > t0:
        return np.zeros(0)
    ts = [np.array([t0, t1])]
    for k, edge in ((0, edge_x), (1, edge_y)):
        if d[k] == 0.0:
            continue
        lo = o[k] + d[k] * t0
        hi = o[k] + d[k] * t1
        if lo > hi:
            lo, hi = hi, lo
        first = math.ceil(lo / edge)
        last = math.floor(hi / edge)
        if last >= first:
            bounds = np.arange(first, last + 1) * edge
            ts.append((bounds - o[k]) / d[k])
    t = np.unique(np.concatenate(ts))
    return t[(t >= t0) & (t <= t1)]


def _crossings(grid: GridGeometry, origin, direction, r: float):
    X, Y = grid.extent
    o = np.asarray(origin, dtype=float) - np.asarray(grid.origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    t = merge_crossings(o, d, X, Y, grid.cell_edge, grid.cell_edge, float(r))
    return o, d, t


def trace_ray(grid: GridGeometry, ray: Ray2, r: float) -> list:
    """Ordered cell segments of the ray clipped to the grid and to length r."""
    if not (np.isfinite(r) and r >= 0):
        raise InvalidInputError(f"ray length must be finite and >= 0, got {r}")
    o, d, t = _crossings(grid, ray.origin, ray.direction, float(r))
    segments = []
    for ta, tb in zip(t[:-1], t[1:]):
        if tb <= ta:
            continue
        mid = o + d * (0.5 * (ta + tb))
        ix = int(math.floor(mid[0] / grid.cell_edge))
        iy = int(math.floor(mid[1] / grid.cell_edge))
        ix = min(max(ix, 0), grid.rows - 1)
        iy = min(max(iy, 0), grid.cols - 1)
        segments.append(CellSegment(ix, iy, float(ta), float(tb)))
    return segments


def _endpoint_cell(grid: GridGeometry, point) -> tuple:
    ix, iy = grid.cell_of(point[0], point[1])
    return min(max(ix, 0), grid.rows - 1), min(max(iy, 0), grid.cols - 1)


def build_grid(scans: ScanSet, geometry: GridGeometry) -> GridDecayMap:
    """Accumulate a decay-rate grid from a scan set.

    Returns add their full in-grid path plus one hit in the endpoint cell;
    sub and super rays add path along their clipped extent (up to r_min and
    r_max respectively) and no hit.
    """
    g = GridDecayMap(geometry)
    r_min, r_max = scans.limits.r_min, scans.limits.r_max
    for lr in scans.rays:
        out = lr.outcome
        if out.kind == "sub":
            reach = r_min
        elif out.kind == "super":
            reach = r_max
        else:
            reach = out.r
        o, d, t = _crossings(geometry, lr.ray.origin, lr.ray.direction, reach)
        if len(t) >= 2:
            mids = o[None, :] + d[None, :] * (0.5 * (t[:-1] + t[1:]))[:, None]
            ix = np.clip(np.floor(mids[:, 0] / geometry.cell_edge).astype(int), 0, geometry.rows - 1)
            iy = np.clip(np.floor(mids[:, 1] / geometry.cell_edge).astype(int), 0, geometry.cols - 1)
            np.add.at(g.path_len, (ix, iy), np.diff(t))
        if out.is_return:
            end = np.asarray(lr.ray.origin) + np.asarray(lr.ray.direction) * out.r
            t0, t1 = segment_inside(
                np.asarray(lr.ray.origin) - np.asarray(geometry.origin),
                lr.ray.direction, *geometry.extent,
            )
            if t0 <= out.r <= t1 + 1e-12:
                ix, iy = _endpoint_cell(geometry, end - np.asarray(geometry.origin))
                g.hits[ix, iy] += 1.0
    return g


def grid_scan_log_likelihood(grid: GridDecayMap, scans: ScanSet) -> float:
    """Joint scan log-likelihood under the piecewise-constant decay field.

    Same mixed-density structure and decay floor as the spectral forward
    model, with the path integral reduced to sum(decay_cell * length_cell).
    """
    decay = grid.decay()
    geom = grid.geometry
    r_min, r_max = scans.limits.r_min, scans.limits.r_max
    total = 0.0
    for lr in scans.rays:
        out = lr.outcome
        if out.kind == "sub":
            reach = r_min
        elif out.kind == "super":
            reach = r_max
        else:
            reach = out.r
        o, d, t = _crossings(geom, lr.ray.origin, lr.ray.direction, reach)
        S = 0.0
        if len(t) >= 2:
            lens = np.diff(t)
            mids = o[None, :] + d[None, :] * (0.5 * (t[:-1] + t[1:]))[:, None]
            ix = np.clip(np.floor(mids[:, 0] / geom.cell_edge).astype(int), 0, geom.rows - 1)
            iy = np.clip(np.floor(mids[:, 1] / geom.cell_edge).astype(int), 0, geom.cols - 1)
            S = float(np.sum(decay[ix, iy] * lens))
        if out.kind == "super":
            total += -S
        elif out.kind == "sub":
            S_eff = max(S, _core.LAMBDA_FLOOR * reach)
            total += math.log(max(-math.expm1(-S_eff), 1e-300))
        else:
            end = np.asarray(lr.ray.origin) + np.asarray(lr.ray.direction) * out.r
            ix, iy = _endpoint_cell(geom, end - np.asarray(geom.origin))
            lam = max(decay[ix, iy], _core.LAMBDA_FLOOR)
            total += math.log(lam) - S
    return total


def sample_grid_as_field(grid: GridDecayMap):
    """Nearest-cell lookup field; unobserved cells report NaN as the marker."""
    decay = grid.decay()
    observed = grid.observed
    geom = grid.geometry
    X, Y = geom.extent

    def field(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lx = x - geom.origin[0]
        ly = y - geom.origin[1]
        if np.any(lx < 0) or np.any(lx > X) or np.any(ly < 0) or np.any(ly > Y):
            raise InvalidInputError("query outside the grid extent")
        ix = np.clip(np.floor(lx / geom.cell_edge).astype(int), 0, geom.rows - 1)
        iy = np.clip(np.floor(ly / geom.cell_edge).astype(int), 0, geom.cols - 1)
        vals = np.where(observed[ix, iy], decay[ix, iy], np.nan)
        return float(vals) if vals.ndim == 0 else vals

    return field


# --- plain-text serialization: header + row-major decay matrix -------------
# Unobserved cells are written as nan.


def format_grid_map(grid: GridDecayMap) -> str:
    geom = grid.geometry
    head = (
        f"{geom.rows} {geom.cols} {float(geom.cell_edge)!r} "
        f"{float(geom.origin[0])!r} {float(geom.origin[1])!r}"
    )
    decay = grid.decay()
    decay = np.where(grid.observed, decay, np.nan)
    lines = [head]
    for row in decay:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_grid_map(text: str) -> GridDecayMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty grid map file")
    head = lines[0].split()
    if len(head) != 5:
        raise InvalidInputError(f"malformed grid map header: {lines[0]!r}")
    rows, cols = int(head[0]), int(head[1])
    edge = float(head[2])
    origin = (float(head[3]), float(head[4]))
    if len(lines) != 1 + rows:
        raise InvalidInputError(f"expected {rows} rows, found {len(lines) - 1}")
    decay = np.array([[float(v) for v in ln.split()] for ln in lines[1:]])
    if decay.shape != (rows, cols):
        raise InvalidInputError("grid data shape does not match header")
    g = GridDecayMap(GridGeometry(rows, cols, edge, origin))
    mask = np.isfinite(decay)
    g.path_len[mask] = 1.0
    g.hits[mask] = decay[mask]
    return g


def save_grid_map(grid: GridDecayMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_grid_map(grid))


def load_grid_map(path) -> GridDecayMap:
    with open(path) as fh:
        return parse_grid_map(fh.read())
