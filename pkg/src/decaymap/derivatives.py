"""Analytic derivatives of the log-likelihood with respect to map coefficients.

Two coefficient-independent building blocks carry everything:

  * the field pair matrix 2*c_i*c_j with c_i = cos(l_i*xt)*cos(m_i*yt),
    whose contraction with the coefficient vector gives d(lambda)/da_i;
  * the path-integral pair matrix (from the shared antiderivative table),
    whose contraction gives dS/da_i.

The per-outcome gradient of a single measurement's log density is then

    sub:    N * dS_i / (1 - N)
    return: dlam_i / lambda - dS_i
    super:  -dS_i

and the Hessian follows by one more differentiation. Both matrices are
independent of the coefficients, so refitting reuses them per ray. Decay
rates in denominators are floored at LAMBDA_FLOOR. All functions are pure;
per-ray contributions may be computed concurrently and summed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import InvalidInputError
from .forward import (
    LidarRay,
    ScanSet,
    SensorLimits,
    _validate_scan_geometry,
    scan_log_likelihood,
)
from .geometry import Ray2
from .spectral import SpectralMap

__all__ = [
    "GradHess",
    "FdCheckReport",
    "decay_coeff_grad",
    "integral_coeff_grad",
    "ray_loglik_grad",
    "scan_loglik_grad",
    "fd_check",
]


@dataclass(frozen=True)
class GradHess:
    """Gradient (length I) and optional symmetric Hessian (I x I)."""

    grad: np.ndarray
    hess: np.ndarray | None = None


@dataclass(frozen=True)
class FdCheckReport:
    """Worst-case finite-difference discrepancy over all coefficients."""

    order: int
    max_rel_err: float
    worst_index: tuple
    step: float


def decay_coeff_grad(m: SpectralMap, x: float, y: float, with_matrix: bool = False):
    """d(lambda)/da at a point; optionally also the constant pair matrix.

    The vector is 2*c*(c @ a); the matrix is 2*outer(c, c), symmetric and
    coefficient-independent.
    """
    if not (np.isfinite(x) and np.isfinite(y)):
        raise InvalidInputError("query coordinates must be finite")
    c = _core.basis_flat(
        m.rows, m.cols,
        np.atleast_1d(x * np.pi / m.extent_x),
        np.atleast_1d(y * np.pi / m.extent_y),
    )[0]
    vec = 2.0 * c * (c @ m.coeffs.ravel())
    if with_matrix:
        return vec, 2.0 * np.outer(c, c)
    return vec


def integral_coeff_grad(m: SpectralMap, ray: Ray2, r: float, with_matrix: bool = False):
    """dS/da for the path integral up to r; optionally the pair matrix.

    The matrix mat satisfies S = 0.5 * a^T mat a and dS/da = mat @ a; it
    depends only on the ray geometry, not on the coefficients.
    """
    r = float(r)
    if not (np.isfinite(r) and r >= 0):
        raise InvalidInputError(f"integration limit must be finite and >= 0, got {r}")
    L, M = m.rows, m.cols
    table = _core.antideriv_table(
        L, M,
        np.atleast_1d(ray.origin[0] * np.pi / m.extent_x),
        np.atleast_1d(ray.origin[1] * np.pi / m.extent_y),
        np.atleast_1d(ray.direction[0] * np.pi / m.extent_x),
        np.atleast_1d(ray.direction[1] * np.pi / m.extent_y),
        np.atleast_1d(r),
    )[0]
    vec = _core.contract_table_with_coeffs(table, m.coeffs)
    if with_matrix:
        return vec, _core.pair_matrix_from_table(table, L, M)
    return vec


def ray_loglik_grad(
    m: SpectralMap, z: LidarRay, limits: SensorLimits, with_hessian: bool = False
) -> GradHess:
    """Gradient (and optional Hessian) of one measurement's log density."""
    return scan_loglik_grad(m, ScanSet((z,), limits), with_hessian)


def scan_loglik_grad(m: SpectralMap, scans: ScanSet, with_hessian: bool = False) -> GradHess:
    """Gradient (and optional Hessian) of the joint scan log-likelihood."""
    if len(scans) == 0:
        I = m.size
        return GradHess(np.zeros(I), np.zeros((I, I)) if with_hessian else None)
    origins, dirs, kinds, radii = scans.to_arrays()
    _validate_scan_geometry(m, origins, dirs, kinds, radii)
    _, grad, hess = _core.scan_eval(
        m.coeffs, m.extent_x, m.extent_y,
        origins, dirs, kinds, radii,
        scans.limits.r_min, scans.limits.r_max,
        want_grad=True, want_hess=with_hessian,
        W=m.pair_weight_table(),
    )
    return GradHess(grad, hess)


def _fd_steps(a_flat: np.ndarray, step: float | None, order: int) -> np.ndarray:
    if step is not None:
        return np.full(a_flat.shape, float(step))
    base = 1e-6 if order == 1 else 1e-4
    return base * (1.0 + np.abs(a_flat))


def fd_check(
    m: SpectralMap, scans: ScanSet, step: float | None = None, order: int = 1
) -> FdCheckReport:
    """Compare analytic derivatives against central finite differences.

    Order 1 differences the log-likelihood against the analytic gradient;
    order 2 uses the four-point double difference of the log-likelihood
    against the analytic Hessian, so both checks are independent of the
    code path they verify. Relative error uses max(1, |analytic|) per entry.
    """
    if order not in (1, 2):
        raise InvalidInputError(f"order must be 1 or 2, got {order}")
    if step is not None and not step > 0:
        raise InvalidInputError(f"step must be positive, got {step}")
    A0 = m.coeffs.copy()
    L, M = A0.shape
    a0 = A0.ravel()
    h = _fd_steps(a0, step, order)

    def ll(a_flat: np.ndarray) -> float:
        return scan_log_likelihood(SpectralMap(a_flat.reshape(L, M), *m.extent), scans)

    res = scan_loglik_grad(m, scans, with_hessian=(order == 2))
    worst = (0.0, (0,))
    if order == 1:
        for i in range(a0.size):
            ap, am = a0.copy(), a0.copy()
            ap[i] += h[i]
            am[i] -= h[i]
            fd = (ll(ap) - ll(am)) / (2.0 * h[i])
            err = abs(fd - res.grad[i]) / max(1.0, abs(res.grad[i]))
            if err > worst[0]:
                worst = (err, (i,))
        used_step = float(h.max())
    else:
        H = res.hess
        for i in range(a0.size):
            for j in range(i, a0.size):
                aa = a0.copy()
                vals = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    a = a0.copy()
                    a[i] += si * h[i]
                    a[j] += sj * h[j]
                    vals.append(ll(a))
                fd = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h[i] * h[j])
                err = abs(fd - H[i, j]) / max(1.0, abs(H[i, j]))
                if err > worst[0]:
                    worst = (err, (i, j))
        used_step = float(h.max())
    return FdCheckReport(order=order, max_rel_err=worst[0], worst_index=worst[1], step=used_step)
