"""Spectral decay-rate maps.

A map is an L x M real coefficient matrix A together with a rectangular
extent (X, Y). The decay field is the square of a plain cosine series over
pi-normalized coordinates xt = pi*x/X, yt = pi*y/Y:

    lambda(x, y) = ( sum_{l,m} A[l, m] * cos(l*xt) * cos(m*yt) )^2

Row index l pairs with x, column index m with y. Flattened coefficients use
row-major order, i = l*M + m. Squaring makes the field nonnegative
everywhere, at the cost of a global sign ambiguity: A and -A define the
same field. No orthonormalization factors are applied; any scaling is
absorbed by the coefficients.

The cosine series is defined for all (x, y); outside [0,X]x[0,Y] it
continues as the even periodic extension, which is physically meaningless
but occasionally convenient for debugging. Maps are immutable after
construction and all evaluations are read-only, so concurrent use needs no
synchronization.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .geometry import Ray2
from .validation import check_extent

__all__ = [
    "SpectralMap",
    "decay_rate",
    "decay_rate_gradient",
    "decay_rate_on_ray",
    "save_spectral_map",
    "load_spectral_map",
    "format_spectral_map",
    "parse_spectral_map",
]


class SpectralMap:
    """Immutable spectral coefficient map with extent (X, Y) in meters."""

    def __init__(self, coeffs, extent_x: float, extent_y: float):
        A = np.array(coeffs, dtype=float)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise InvalidInputError(f"coefficients must be a 2-D matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise InvalidInputError("coefficients must be finite")
        A.setflags(write=False)
        self._coeffs = A
        self._extent = check_extent(extent_x, extent_y)
        self._weight_table = None  # lazy cache, see pair_weight_table()

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def rows(self) -> int:
        return self._coeffs.shape[0]

    @property
    def cols(self) -> int:
        return self._coeffs.shape[1]

    @property
    def size(self) -> int:
        """Number of coefficients I = L*M."""
        return self._coeffs.size

    @property
    def extent_x(self) -> float:
        return self._extent[0]

    @property
    def extent_y(self) -> float:
        return self._extent[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self._extent

    def pair_weight_table(self) -> np.ndarray:
        """Cached coefficient-pair weight table (see _core.pair_weight_table)."""
        if self._weight_table is None:
            from ._core import pair_weight_table

            self._weight_table = pair_weight_table(self._coeffs)
            self._weight_table.setflags(write=False)
        return self._weight_table

    def __repr__(self):
        return (
            f"SpectralMap(rows={self.rows}, cols={self.cols}, "
            f"extent=({self.extent_x}, {self.extent_y}))"
        )


def _normalized(m: SpectralMap, x, y):
    xt = np.asarray(x, dtype=float) * (np.pi / m.extent_x)
    yt = np.asarray(y, dtype=float) * (np.pi / m.extent_y)
    return xt, yt


def _series_value(m: SpectralMap, xt, yt):
    """The unsquared cosine series, broadcast over xt/yt arrays."""
    l = np.arange(m.rows)
    mm = np.arange(m.cols)
    cx = np.cos(np.multiply.outer(xt, l))  # (..., L)
    cy = np.cos(np.multiply.outer(yt, mm))  # (..., M)
    return np.einsum("...l,lm,...m->...", cx, m.coeffs, cy)


def decay_rate(m: SpectralMap, x, y):
    """Decay rate lambda at (x, y); x and y broadcast elementwise."""
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("query coordinates must be finite")
    xt, yt = _normalized(m, x, y)
    t = _series_value(m, xt, yt)
    return t * t


def decay_rate_gradient(m: SpectralMap, x, y):
    """Spatial gradient (d lambda/dx, d lambda/dy) at (x, y)."""
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInputError("query coordinates must be finite")
    xt, yt = _normalized(m, x, y)
    l = np.arange(m.rows)
    mm = np.arange(m.cols)
    cx = np.cos(np.multiply.outer(xt, l))
    cy = np.cos(np.multiply.outer(yt, mm))
    sx = np.sin(np.multiply.outer(xt, l)) * l  # d/dxt of -cos shifted below
    sy = np.sin(np.multiply.outer(yt, mm)) * mm
    t = np.einsum("...l,lm,...m->...", cx, m.coeffs, cy)
    dt_dxt = -np.einsum("...l,lm,...m->...", sx, m.coeffs, cy)
    dt_dyt = -np.einsum("...l,lm,...m->...", cx, m.coeffs, sy)
    scale_x = np.pi / m.extent_x
    scale_y = np.pi / m.extent_y
    return 2.0 * t * dt_dxt * scale_x, 2.0 * t * dt_dyt * scale_y


def decay_rate_on_ray(m: SpectralMap, ray: Ray2, r):
    """Decay rate at distance r along the ray (r may be an array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise InvalidInputError("ray distance must be nonnegative")
    p = ray.origin + np.multiply.outer(r, ray.direction)
    return decay_rate(m, p[..., 0], p[..., 1])


# --- plain-text serialization: "L M X Y" header, then L rows of M decimals ---


def format_spectral_map(m: SpectralMap) -> str:
    lines = [f"{m.rows} {m.cols} {float(m.extent_x)!r} {float(m.extent_y)!r}"]
    for row in m.coeffs:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_spectral_map(text: str) -> SpectralMap:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InvalidInputError("empty spectral map file")
    head = lines[0].split()
    if len(head) != 4:
        raise InvalidInputError(f"malformed spectral map header: {lines[0]!r}")
    L, M = int(head[0]), int(head[1])
    X, Y = float(head[2]), float(head[3])
    if len(lines) != 1 + L:
        raise InvalidInputError(f"expected {L} coefficient rows, found {len(lines) - 1}")
    rows = []
    for ln in lines[1:]:
        vals = [float(v) for v in ln.split()]
        if len(vals) != M:
            raise InvalidInputError(f"expected {M} values per row, got {len(vals)}")
        rows.append(vals)
    return SpectralMap(np.array(rows), X, Y)


def save_spectral_map(m: SpectralMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_spectral_map(m))


def load_spectral_map(path) -> SpectralMap:
    with open(path) as fh:
        return parse_spectral_map(fh.read())
