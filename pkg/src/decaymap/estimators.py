"""Scikit-learn style estimators wrapping the functional core.

Both estimators accept either a ScanSet or a plain array of shape (n, 6)
with columns [origin_x, origin_y, dir_x, dir_y, kind, radius], where kind
is 0 (sub), 1 (return), or 2 (super) and radius is ignored for no-return
rays. `predict` evaluates the fitted decay field at (n, 2) query points and
`score` returns the joint log-likelihood of a scan set, so the estimators
compose with model-selection tooling out of the box.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InvalidInputError
from .fit import FitConfig, fit
from .forward import ScanSet, SensorLimits, scan_log_likelihood
from .grid import GridGeometry, build_grid, grid_scan_log_likelihood
from .spectral import decay_rate
from .validation import as_points

__all__ = ["DecayMapEstimator", "GridMapEstimator", "scans_from_array"]


def scans_from_array(X, r_min: float, r_max: float) -> ScanSet:
    """Build a ScanSet from an (n, 6) ray array (see module docstring)."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise InvalidInputError(f"expected ray array of shape (n, 6), got {arr.shape}")
    limits = SensorLimits(r_min, r_max)
    return ScanSet.from_arrays(
        arr[:, 0:2], arr[:, 2:4], arr[:, 4].astype(int), arr[:, 5], limits
    )


def _as_scanset(X, r_min: float, r_max: float) -> ScanSet:
    if isinstance(X, ScanSet):
        return X
    return scans_from_array(X, r_min, r_max)


class DecayMapEstimator(BaseEstimator):
    """Spectral decay-rate map fitted by maximum likelihood.

    Parameters mirror FitConfig; `extent` is the (X, Y) map extent in
    meters. After `fit`, the map is available as `map_` and the
    optimization report as `report_`.
    """

    def __init__(
        self,
        rows: int = 10,
        cols: int = 10,
        extent: tuple = (10.0, 10.0),
        max_iters: int = 200,
        rel_tol: float = 1e-3,
        init: str = "grid-dct",
        noise_scale: float = 1e-3,
        seed: int = 0,
        hessian_mode: str = "newton",
        r_min: float = 0.04,
        r_max: float = 80.0,
    ):
        self.rows = rows
        self.cols = cols
        self.extent = extent
        self.max_iters = max_iters
        self.rel_tol = rel_tol
        self.init = init
        self.noise_scale = noise_scale
        self.seed = seed
        self.hessian_mode = hessian_mode
        self.r_min = r_min
        self.r_max = r_max

    def _config(self) -> FitConfig:
        return FitConfig(
            rows=self.rows,
            cols=self.cols,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            init=self.init,
            noise_scale=self.noise_scale,
            seed=self.seed,
            hessian_mode=self.hessian_mode,
        )

    def fit(self, X, y=None):
        scans = _as_scanset(X, self.r_min, self.r_max)
        self.map_, self.report_ = fit(scans, tuple(self.extent), self._config())
        self.n_iter_ = self.report_.iterations
        return self

    def predict(self, X):
        """Decay rates at query points of shape (n, 2)."""
        if not hasattr(self, "map_"):
            raise InvalidInputError("estimator is not fitted")
        pts = as_points(X)
        return decay_rate(self.map_, pts[:, 0], pts[:, 1])

    def score(self, X, y=None) -> float:
        """Joint log-likelihood of the scans under the fitted map."""
        if not hasattr(self, "map_"):
            raise InvalidInputError("estimator is not fitted")
        return scan_log_likelihood(self.map_, _as_scanset(X, self.r_min, self.r_max))


class GridMapEstimator(BaseEstimator):
    """Decay-rate grid map baseline with the same estimator surface."""

    def __init__(
        self,
        rows: int = 10,
        cols: int = 10,
        extent: tuple = (10.0, 10.0),
        r_min: float = 0.04,
        r_max: float = 80.0,
    ):
        self.rows = rows
        self.cols = cols
        self.extent = extent
        self.r_min = r_min
        self.r_max = r_max

    def fit(self, X, y=None):
        scans = _as_scanset(X, self.r_min, self.r_max)
        edge = float(self.extent[0]) / self.rows
        self.grid_ = build_grid(scans, GridGeometry(self.rows, self.cols, edge))
        return self

    def predict(self, X):
        """Decay rates at query points (unobserved cells give 0)."""
        if not hasattr(self, "grid_"):
            raise InvalidInputError("estimator is not fitted")
        pts = as_points(X)
        geom = self.grid_.geometry
        ix = np.clip(
            np.floor((pts[:, 0] - geom.origin[0]) / geom.cell_edge).astype(int),
            0, geom.rows - 1,
        )
        iy = np.clip(
            np.floor((pts[:, 1] - geom.origin[1]) / geom.cell_edge).astype(int),
            0, geom.cols - 1,
        )
        return self.grid_.decay()[ix, iy]

    def score(self, X, y=None) -> float:
        if not hasattr(self, "grid_"):
            raise InvalidInputError("estimator is not fitted")
        return grid_scan_log_likelihood(self.grid_, _as_scanset(X, self.r_min, self.r_max))
