"""Evaluation protocols: map-value RMSE, likelihood comparison, rendering.

Decay rates live on [0, inf), so map values are compared through the
reflection probability p_ref = 1 - exp(-lambda): the probability of a
reflection within 1 m of homogeneous decay lambda. The reference distance
is fixed at 1 m and not configurable (varying it has little effect on the
ranking). RMSE is computed in p_ref space over the cells of the ground
truth grid that were observed at least once.

The comparison protocol builds one fine ground-truth grid from the scans,
then for each resolution n fits an n x n spectral map and builds an n x n
grid map from the same data (equal parameter counts), rasterizes everything
at the truth geometry, and records RMSEs, data log-likelihoods, and wall
times. Per-resolution runs are independent; the `threads` knob evaluates
them concurrently. Reports serialize to JSON lines and to a CSV with one
row per resolution; the columns reserve slots for externally computed
occupancy-map baselines so third-party numbers can be merged.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .fit import FitConfig, fit
from .forward import ScanSet, scan_log_likelihood
from .grid import GridDecayMap, GridGeometry, build_grid, grid_scan_log_likelihood
from .spectral import SpectralMap, decay_rate

__all__ = [
    "p_ref",
    "rasterize",
    "raster_observed_mask",
    "rmse_pref",
    "EvalRow",
    "EvalReport",
    "run_map_comparison",
    "run_map_comparison_with_maps",
    "render_pgm",
    "PAPER_RESOLUTIONS",
]

# Paired map resolutions and the matching pixel edge lengths for a 10 m patch.
PAPER_RESOLUTIONS = (10, 13, 20, 29, 40)

CSV_COLUMNS = [
    "edge_len_m",
    "params_rows",
    "params_cols",
    "rmse_dct",
    "rmse_grid",
    "loglik_dct",
    "loglik_grid",
    "loglik_gpom",
    "loglik_hm",
    "fit_time_s",
    "grid_time_s",
]


def p_ref(decay):
    """Reflection probability within 1 m: 1 - exp(-lambda), in [0, 1)."""
    arr = np.asarray(decay, dtype=float)
    if np.any(arr < 0):
        raise InvalidInputError("decay rates must be nonnegative")
    out = -np.expm1(-arr)
    return float(out) if out.ndim == 0 else out


def _midpoint_grid(extent: tuple, rows: int, cols: int):
    X, Y = extent
    xs = (np.arange(rows) + 0.5) * (X / rows)
    ys = (np.arange(cols) + 0.5) * (Y / cols)
    return np.meshgrid(xs, ys, indexing="ij")


def rasterize(field, rows: int, cols: int) -> np.ndarray:
    """p_ref raster of a field sampled at cell midpoints of its own extent.

    `field` is a SpectralMap or a GridDecayMap; unobserved grid cells
    rasterize as decay 0 (use raster_observed_mask for masking).
    """
    if rows < 1 or cols < 1:
        raise InvalidInputError("raster shape must be at least 1x1")
    if isinstance(field, SpectralMap):
        gx, gy = _midpoint_grid(field.extent, rows, cols)
        lam = decay_rate(field, gx, gy)
    elif isinstance(field, GridDecayMap):
        geom = field.geometry
        gx, gy = _midpoint_grid(geom.extent, rows, cols)
        ix = np.clip((gx / geom.cell_edge).astype(int), 0, geom.rows - 1)
        iy = np.clip((gy / geom.cell_edge).astype(int), 0, geom.cols - 1)
        lam = field.decay()[ix, iy]
    else:
        raise InvalidInputError(f"unsupported field type {type(field)!r}")
    return p_ref(lam)


def raster_observed_mask(grid: GridDecayMap, rows: int, cols: int,
                         count_hits_only: bool = False) -> np.ndarray:
    """Observation mask of a grid map resampled to a rows x cols raster."""
    geom = grid.geometry
    gx, gy = _midpoint_grid(geom.extent, rows, cols)
    ix = np.clip((gx / geom.cell_edge).astype(int), 0, geom.rows - 1)
    iy = np.clip((gy / geom.cell_edge).astype(int), 0, geom.cols - 1)
    return grid.observed_mask(count_hits_only)[ix, iy]


def rmse_pref(candidate: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> float:
    """Root mean squared p_ref difference over the masked cells."""
    candidate = np.asarray(candidate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if candidate.shape != truth.shape or candidate.shape != mask.shape:
        raise InvalidInputError("raster and mask shapes must match")
    if not np.any(mask):
        raise InvalidInputError("observation mask is empty")
    diff = candidate[mask] - truth[mask]
    return float(np.sqrt(np.mean(diff * diff)))


@dataclass
class EvalRow:
    """One resolution of the comparison; schema mirrors the report tables.

    loglik_gpom / loglik_hm stay None unless merged from external tools.
    """

    edge_len_m: float
    params_rows: int
    params_cols: int
    rmse_dct: float
    rmse_grid: float
    loglik_dct: float
    loglik_grid: float
    fit_time_s: float
    grid_time_s: float
    loglik_gpom: float | None = None
    loglik_hm: float | None = None


@dataclass
class EvalReport:
    rows: list

    def to_jsonl(self) -> str:
        return "".join(json.dumps(asdict(r), sort_keys=True) + "\n" for r in self.rows)

    @classmethod
    def from_jsonl(cls, text: str) -> "EvalReport":
        rows = [EvalRow(**json.loads(ln)) for ln in text.splitlines() if ln.strip()]
        return cls(rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            d = asdict(r)
            writer.writerow({k: ("" if d.get(k) is None else d.get(k)) for k in CSV_COLUMNS})
        return buf.getvalue()


def _compare_one(scans: ScanSet, extent, n: int, truth_raster, truth_mask,
                 truth_shape, fit_config: FitConfig):
    X, _ = extent
    cfg_dict = fit_config.to_dict()
    cfg_dict["rows"] = n
    cfg_dict["cols"] = n
    cfg = FitConfig.from_dict(cfg_dict)

    t0 = time.perf_counter()
    dct_map, _report = fit(scans, extent, cfg)
    fit_time = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid_map = build_grid(scans, GridGeometry(n, n, X / n))
    grid_time = time.perf_counter() - t0

    rows, cols = truth_shape
    dct_raster = rasterize(dct_map, rows, cols)
    grid_raster = rasterize(grid_map, rows, cols)
    row = EvalRow(
        edge_len_m=X / n,
        params_rows=n,
        params_cols=n,
        rmse_dct=rmse_pref(dct_raster, truth_raster, truth_mask),
        rmse_grid=rmse_pref(grid_raster, truth_raster, truth_mask),
        loglik_dct=scan_log_likelihood(dct_map, scans),
        loglik_grid=grid_scan_log_likelihood(grid_map, scans),
        fit_time_s=fit_time,
        grid_time_s=grid_time,
    )
    return row, dct_map, grid_map


def run_map_comparison_with_maps(
    scans: ScanSet,
    extent: tuple,
    resolutions=PAPER_RESOLUTIONS,
    truth_shape: tuple = (200, 200),
    fit_config: FitConfig | None = None,
    threads: int = 1,
):
    """run_map_comparison, additionally returning the truth grid and the
    fitted (spectral, grid) map pair per resolution."""
    if len(scans) == 0:
        raise InvalidInputError("cannot evaluate an empty scan set")
    X, Y = float(extent[0]), float(extent[1])
    fit_config = fit_config or FitConfig()

    truth = build_grid(scans, GridGeometry(truth_shape[0], truth_shape[1], X / truth_shape[0]))
    truth_raster = rasterize(truth, *truth_shape)
    truth_mask = truth.observed_mask()

    work = [
        (scans, (X, Y), int(n), truth_raster, truth_mask, truth_shape, fit_config)
        for n in resolutions
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda args: _compare_one(*args), work))
    else:
        results = [_compare_one(*args) for args in work]

    rows = [r[0] for r in results]
    times = [r.fit_time_s for r in rows]
    if any(t2 < t1 for t1, t2 in zip(times, times[1:])):
        logging.getLogger(__name__).info(
            "fit times not monotone in parameter count: %s", times
        )
    maps = {row.params_rows: (dct, grid) for row, dct, grid in results}
    return EvalReport(rows), truth, maps


def run_map_comparison(
    scans: ScanSet,
    extent: tuple,
    resolutions=PAPER_RESOLUTIONS,
    truth_shape: tuple = (200, 200),
    fit_config: FitConfig | None = None,
    threads: int = 1,
) -> EvalReport:
    """Equal-parameter spectral-vs-grid comparison against a truth grid.

    The ground truth is a truth_shape grid built from `scans` themselves;
    RMSEs are over its observed cells, log-likelihoods are of the same
    scans the maps were built from.
    """
    report, _, _ = run_map_comparison_with_maps(
        scans, extent, resolutions, truth_shape, fit_config, threads
    )
    return report


def render_pgm(raster: np.ndarray) -> bytes:
    """Binary 8-bit PGM (P5) of a p_ref raster; byte value = round(255*p)."""
    raster = np.asarray(raster, dtype=float)
    if raster.ndim != 2:
        raise InvalidInputError("raster must be 2-D")
    pixels = np.rint(255.0 * np.clip(raster, 0.0, 1.0)).astype(np.uint8)
    header = f"P5\n{raster.shape[1]} {raster.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()
