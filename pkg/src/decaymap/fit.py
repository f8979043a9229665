"""Inverse model: maximize the joint scan log-likelihood over coefficients.

The default optimizer is a trust-region Newton loop on the analytic gradient
and Hessian, with a Steihaug-CG subproblem solver; negative curvature rides
to the trust boundary, so the non-concave objective (quartic in the
coefficients) needs no special casing. Steps are accepted only when the
log-likelihood actually increases, which keeps the reported trace
nondecreasing. Termination follows the relative-change rule
|delta LL| / max(1, |LL|) < rel_tol, or max_iters.

Initialization: "grid-dct" builds a coarse rows x cols decay grid from the
same scans, takes the elementwise square root, and maps the cell-midpoint
samples to coefficients through the type-II cosine transform that exactly
interpolates them; "constant-noise" uses sqrt(mean decay) for the constant
term plus seeded Gaussian noise, and is also the automatic fallback when
the grid is degenerate.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft

from . import _core
from .errors import InitFailureError, InvalidInputError
from .forward import ScanSet, _validate_scan_geometry
from .geometry import exit_distance
from .grid import merge_crossings
from .spectral import SpectralMap

__all__ = [
    "FitConfig",
    "FitReport",
    "fit",
    "coeffs_from_midpoint_samples",
    "initial_coeffs",
]

INIT_GRID_DCT = "grid-dct"
INIT_CONSTANT_NOISE = "constant-noise"
MODE_NEWTON = "newton"
MODE_GRADIENT = "gradient"


@dataclass
class FitConfig:
    """Fit parameters; defaults follow the reference experimental setup."""

    rows: int = 10
    cols: int = 10
    max_iters: int = 200
    rel_tol: float = 1e-3
    init: str = INIT_GRID_DCT
    noise_scale: float = 1e-3
    seed: int = 0
    hessian_mode: str = MODE_NEWTON

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidInputError("rows and cols must be >= 1")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidInputError("rel_tol must be positive")
        if self.init not in (INIT_GRID_DCT, INIT_CONSTANT_NOISE):
            raise InvalidInputError(f"unknown init {self.init!r}")
        if self.hessian_mode not in (MODE_NEWTON, MODE_GRADIENT):
            raise InvalidInputError(f"unknown hessian_mode {self.hessian_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)


@dataclass
class FitReport:
    """Outcome of one fit: trace of accepted log-likelihoods and metadata."""

    final_loglik: float
    loglik_trace: list
    iterations: int
    converged: bool
    wall_time: float
    dropped_rays: int = 0
    grad_inf_norm: float = math.nan


def coeffs_from_midpoint_samples(samples: np.ndarray) -> np.ndarray:
    """Coefficients whose cosine series interpolates the given samples.

    samples[p, q] are field values at cell midpoints ((p+0.5)X/L,
    (q+0.5)Y/M). The plain cosine series at those points is the type-III
    transform of the coefficients, so the forward type-II transform with
    1/(2N) and 1/N weights inverts it exactly.
    """
    F = np.asarray(samples, dtype=float)
    L, M = F.shape
    out = scipy.fft.dctn(F, type=2)
    wx = np.full(L, 1.0 / L)
    wx[0] = 1.0 / (2.0 * L)
    wy = np.full(M, 1.0 / M)
    wy[0] = 1.0 / (2.0 * M)
    return out * wx[:, None] * wy[None, :]


def _lattice_decay(scans: ScanSet, extent: tuple, rows: int, cols: int):
    """hits/path_len accumulators on a rows x cols rectangular lattice."""
    X, Y = extent
    ex, ey = X / rows, Y / cols
    hits = np.zeros((rows, cols))
    path = np.zeros((rows, cols))
    r_min, r_max = scans.limits.r_min, scans.limits.r_max
    for lr in scans.rays:
        out = lr.outcome
        reach = {"sub": r_min, "super": r_max}.get(out.kind, out.r)
        o = np.asarray(lr.ray.origin, dtype=float)
        d = np.asarray(lr.ray.direction, dtype=float)
        t = merge_crossings(o, d, X, Y, ex, ey, reach)
        if len(t) >= 2:
            mids = o[None, :] + d[None, :] * (0.5 * (t[:-1] + t[1:]))[:, None]
            ix = np.clip(np.floor(mids[:, 0] / ex).astype(int), 0, rows - 1)
            iy = np.clip(np.floor(mids[:, 1] / ey).astype(int), 0, cols - 1)
            np.add.at(path, (ix, iy), np.diff(t))
        if out.is_return:
            end = o + d * out.r
            ix = min(max(int(math.floor(end[0] / ex)), 0), rows - 1)
            iy = min(max(int(math.floor(end[1] / ey)), 0), cols - 1)
            hits[ix, iy] += 1.0
    return hits, path


def initial_coeffs(scans: ScanSet, extent: tuple, config: FitConfig) -> np.ndarray:
    """Starting coefficients per the configured strategy."""
    hits, path = _lattice_decay(scans, extent, config.rows, config.cols)
    observed = path > 0
    decay = np.zeros_like(hits)
    decay[observed] = hits[observed] / path[observed]
    total_len = float(path.sum())
    mean_decay = float(hits.sum() / total_len) if total_len > 0 else 0.01
    degenerate = not np.any(observed) or not np.all(np.isfinite(decay))

    if config.init == INIT_GRID_DCT and not degenerate:
        filled = np.where(observed, decay, mean_decay)
        return coeffs_from_midpoint_samples(np.sqrt(filled))

    rng = np.random.default_rng(config.seed)
    A0 = rng.normal(0.0, config.noise_scale, size=(config.rows, config.cols))
    A0[0, 0] = math.sqrt(mean_decay) if mean_decay > 0 else 0.1
    return A0


def _clipped_lengths(scans: ScanSet, extent: tuple) -> np.ndarray:
    origins, dirs, kinds, radii = scans.to_arrays()
    t_exit = exit_distance(origins, dirs, *extent)
    length = np.where(kinds == _core.KIND_RETURN, radii, 0.0)
    length = np.where(kinds == _core.KIND_SUPER, np.minimum(scans.limits.r_max, t_exit), length)
    length = np.where(kinds == _core.KIND_SUB, np.minimum(scans.limits.r_min, t_exit), length)
    return length


def _steihaug(g: np.ndarray, H: np.ndarray, delta: float, tol: float) -> np.ndarray:
    """Approximately minimize g's + s'Hs/2 subject to ||s|| <= delta."""
    n = len(g)
    s = np.zeros(n)
    r = g.copy()
    if np.linalg.norm(r) < tol:
        return s
    d = -r
    rr = r @ r
    for _ in range(min(2 * n, 400)):
        Hd = H @ d
        dHd = d @ Hd
        if dHd <= 0.0:
            return s + _to_boundary(s, d, delta) * d
        alpha = rr / dHd
        s_next = s + alpha * d
        if np.linalg.norm(s_next) >= delta:
            return s + _to_boundary(s, d, delta) * d
        s = s_next
        r = r + alpha * Hd
        rr_next = r @ r
        if math.sqrt(rr_next) < tol:
            return s
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return s


def _to_boundary(s: np.ndarray, d: np.ndarray, delta: float) -> float:
    """Positive tau with ||s + tau*d|| = delta."""
    dd = d @ d
    sd = s @ d
    ss = s @ s
    disc = max(sd * sd - dd * (ss - delta * delta), 0.0)
    return (-sd + math.sqrt(disc)) / dd


def fit(
    scans: ScanSet, extent: tuple, config: FitConfig, init_coeffs=None
) -> tuple:
    """Maximize the scan log-likelihood; returns (SpectralMap, FitReport).

    `init_coeffs` overrides the configured initialization with an explicit
    rows x cols starting matrix.
    """
    if len(scans) == 0:
        raise InvalidInputError("cannot fit a map to an empty scan set")
    X, Y = float(extent[0]), float(extent[1])

    lengths = _clipped_lengths(scans, (X, Y))
    keep = lengths >= _core.MIN_SEGMENT_LEN
    dropped = int(np.count_nonzero(~keep))
    if dropped:
        origins, dirs, kinds, radii = scans.to_arrays()
        scans = ScanSet.from_arrays(
            origins[keep], dirs[keep], kinds[keep], radii[keep], scans.limits
        )
    if len(scans) == 0:
        raise InvalidInputError("all rays were dropped as degenerate")

    origins, dirs, kinds, radii = scans.to_arrays()
    tmp_map = SpectralMap(np.zeros((1, 1)), X, Y)
    _validate_scan_geometry(tmp_map, origins, dirs, kinds, radii)
    r_min, r_max = scans.limits.r_min, scans.limits.r_max

    def evaluate(a_flat, want_grad=False, want_hess=False):
        A = a_flat.reshape(config.rows, config.cols)
        per_ray, grad, hess = _core.scan_eval(
            A, X, Y, origins, dirs, kinds, radii, r_min, r_max,
            want_grad=want_grad, want_hess=want_hess,
        )
        return float(np.sum(per_ray)), grad, hess

    start = time.perf_counter()
    if init_coeffs is not None:
        a = np.asarray(init_coeffs, dtype=float)
        if a.shape != (config.rows, config.cols):
            raise InvalidInputError(
                f"init_coeffs shape {a.shape} does not match ({config.rows}, {config.cols})"
            )
        a = a.ravel()
    else:
        a = initial_coeffs(scans, (X, Y), config).ravel()
    ll, _, _ = evaluate(a)
    if not np.isfinite(ll):
        raise InitFailureError(f"objective is non-finite at the initial point ({ll})")

    trace = [ll]
    if config.hessian_mode == MODE_NEWTON:
        a, ll, iters, converged, g_inf = _newton_loop(evaluate, a, ll, trace, config)
    else:
        a, ll, iters, converged, g_inf = _ascent_loop(evaluate, a, ll, trace, config)

    report = FitReport(
        final_loglik=ll,
        loglik_trace=trace,
        iterations=iters,
        converged=converged,
        wall_time=time.perf_counter() - start,
        dropped_rays=dropped,
        grad_inf_norm=g_inf,
    )
    return SpectralMap(a.reshape(config.rows, config.cols), X, Y), report


def _newton_loop(evaluate, a, ll, trace, config: FitConfig):
    delta = max(1.0, 0.1 * float(np.linalg.norm(a)))
    delta_max = 1e3 * max(1.0, float(np.linalg.norm(a)))
    converged = False
    iters = 0
    _, grad, hess = evaluate(a, want_grad=True, want_hess=True)
    while iters < config.max_iters:
        iters += 1
        g = -grad  # minimize -LL
        H = -hess
        tol = min(0.5, math.sqrt(np.linalg.norm(g))) * np.linalg.norm(g)
        s = _steihaug(g, H, delta, max(tol, 1e-14))
        pred = -(g @ s + 0.5 * s @ H @ s)
        if pred <= 0 or not np.all(np.isfinite(s)):
            delta *= 0.25
            if delta < 1e-12 * (1.0 + np.linalg.norm(a)):
                converged = True
                break
            continue
        ll_new, _, _ = evaluate(a + s)
        actual = ll_new - ll
        rho = actual / pred
        if rho < 0.25:
            delta = 0.25 * float(np.linalg.norm(s))
        elif rho > 0.75 and np.linalg.norm(s) >= 0.99 * delta:
            delta = min(2.0 * delta, delta_max)
        if actual > 0 and np.isfinite(ll_new):
            a = a + s
            rel_change = abs(ll_new - ll) / max(1.0, abs(ll_new))
            ll = ll_new
            trace.append(ll)
            _, grad, hess = evaluate(a, want_grad=True, want_hess=True)
            if rel_change < config.rel_tol:
                converged = True
                break
        elif delta < 1e-12 * (1.0 + np.linalg.norm(a)):
            converged = True
            break
    return a, ll, iters, converged, float(np.max(np.abs(grad)))


def _ascent_loop(evaluate, a, ll, trace, config: FitConfig):
    step = 1.0
    converged = False
    iters = 0
    _, grad, _ = evaluate(a, want_grad=True)
    while iters < config.max_iters:
        iters += 1
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            converged = True
            break
        d = grad / gnorm
        accepted = False
        for _ in range(50):
            ll_new, _, _ = evaluate(a + step * d)
            if np.isfinite(ll_new) and ll_new > ll + 1e-4 * step * gnorm:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True
            break
        a = a + step * d
        rel_change = abs(ll_new - ll) / max(1.0, abs(ll_new))
        ll = ll_new
        trace.append(ll)
        _, grad, _ = evaluate(a, want_grad=True)
        step *= 1.5
        if rel_change < config.rel_tol:
            converged = True
            break
    return a, ll, iters, converged, float(np.max(np.abs(grad)))
