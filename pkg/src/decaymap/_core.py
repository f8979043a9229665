"""Vectorized numerical engine shared by the forward model, derivatives, and fit.

Everything here works on raw coefficient matrices and coordinate arrays; the
public modules wrap these functions with typed interfaces and validation.

The central trick: the squared cosine series couples coefficient pairs (i, j)
only through the integer frequency pair (l_i +/- l_j, m_i +/- m_j). All
pairwise quantities therefore collapse onto a small table indexed by
P in [-(L-1), 2L-2] and Q in [-(M-1), 2M-2]:

  * pair_weight_table(A)[P, Q] sums a_i*a_j over pairs hitting (P, Q),
    so the path integral of the field along a ray is a single table
    contraction per (ray, r) instead of an O(I^2) pair loop.
  * antideriv_table(...) evaluates the closed-form antiderivative of
    cos(P*(sxt + vxt*r') + Q*(syt + vyt*r')) on that grid, already summed
    over the sign of Q. The integral uses the sine-difference form written
    as 2*cos(mid)*sin(w*r/2)/w, which is free of cancellation for small w,
    and switches to the r*cos(phase-at-origin) branch when the directional
    frequency w falls inside the ZERO_FREQ_TOL band.
  * pair_matrix_from_table / contract_table_with_coeffs expand a table back
    to the I x I pair matrix or contract it against A to get the length-I
    coefficient gradient, both needed for the likelihood derivatives.

Coordinates with a `t` suffix are pi-normalized: xt = pi*x/X, yt = pi*y/Y.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d, correlate2d, fftconvolve

# Branch band for the directional frequency w = P*vxt + Q*vyt (rad/m).
ZERO_FREQ_TOL = 1e-9
# Floor applied to the decay rate inside logs and derivative denominators.
LAMBDA_FLOOR = 1e-12
# Clipped in-map segments shorter than this carry no usable information.
MIN_SEGMENT_LEN = 1e-9
# Ultimate guard so log probabilities stay finite even for r_min = 0.
_PROB_FLOOR = 1e-300

KIND_SUB = 0
KIND_RETURN = 1
KIND_SUPER = 2


def pair_weight_table(A: np.ndarray) -> np.ndarray:
    """Coefficient-pair weights binned by frequency pair (P, Q).

    Returns W of shape (3L-2, 3M-2) with W[P + L - 1, Q + M - 1] =
    sum of a_i * a_j over all (i, j) and signs with l_i + alpha*l_j = P and
    m_i + gamma*m_j = Q. Built from the four convolution/correlation
    combinations of A with itself.
    """
    L, M = A.shape
    W = np.zeros((3 * L - 2, 3 * M - 2))
    pp = convolve2d(A, A, mode="full")
    pm = convolve2d(A, A[:, ::-1], mode="full")
    mp = convolve2d(A, A[::-1, :], mode="full")
    mm = convolve2d(A, A[::-1, ::-1], mode="full")
    W[L - 1 :, M - 1 :] += pp
    W[L - 1 :, : 2 * M - 1] += pm
    W[: 2 * L - 1, M - 1 :] += mp
    W[: 2 * L - 1, : 2 * M - 1] += mm
    return W


def freq_values(L: int, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer frequency axes P and Q of the pair tables."""
    P = np.arange(-(L - 1), 2 * L - 1, dtype=float)
    Q = np.arange(-(M - 1), 2 * M - 1, dtype=float)
    return P, Q


def antideriv_table(
    L: int,
    M: int,
    sxt: np.ndarray,
    syt: np.ndarray,
    vxt: np.ndarray,
    vyt: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """Antiderivative table, summed over the sign of Q.

    All ray arguments are 1-D arrays of equal length n (pi-normalized origin
    and direction components, plus the integration limit r in meters).
    Returns shape (n, 3L-2, 3M-2).

    The needed phases are all of the form P*ax + sign*Q*ay, so the 2-D trig
    tables factor through the angle-addition identities into outer products
    of per-axis cosine/sine vectors; only O(L + M) transcendentals are
    evaluated per ray.
    """
    P, Q = freq_values(L, M)
    sxt = np.asarray(sxt, dtype=float)[:, None]
    syt = np.asarray(syt, dtype=float)[:, None]
    vxt = np.asarray(vxt, dtype=float)[:, None]
    vyt = np.asarray(vyt, dtype=float)[:, None]
    r = np.asarray(r, dtype=float)[:, None]

    # Three angle families: phase at the origin (s), at the midpoint
    # (u = s + v*r/2), and the half-sweep (w = v*r/2).
    ux = sxt + vxt * (r * 0.5)
    uy = syt + vyt * (r * 0.5)
    wx = vxt * (r * 0.5)
    wy = vyt * (r * 0.5)

    Pux, Qux = P[None, :] * ux, Q[None, :] * uy
    Pwx, Qwy = P[None, :] * wx, Q[None, :] * wy
    Psx, Qsy = P[None, :] * sxt, Q[None, :] * syt
    cpu, spu = np.cos(Pux), np.sin(Pux)
    cqu, squ = np.cos(Qux), np.sin(Qux)
    cpw, spw = np.cos(Pwx), np.sin(Pwx)
    cqw, sqw = np.cos(Qwy), np.sin(Qwy)
    cps, sps = np.cos(Psx), np.sin(Psx)
    cqs, sqs = np.cos(Qsy), np.sin(Qsy)

    wP = (P[None, :] * vxt)[:, :, None]
    wQ = (Q[None, :] * vyt)[:, None, :]
    rg = r[:, :, None]

    out = 0.0
    for q_sign in (1.0, -1.0):
        w = wP + q_sign * wQ
        # cos(P*ux + s*Q*uy), sin(P*wx + s*Q*wy), cos(P*sx + s*Q*sy)
        cos_mid = cpu[:, :, None] * cqu[:, None, :] - q_sign * (
            spu[:, :, None] * squ[:, None, :]
        )
        sin_half = spw[:, :, None] * cqw[:, None, :] + q_sign * (
            cpw[:, :, None] * sqw[:, None, :]
        )
        cos_origin = cps[:, :, None] * cqs[:, None, :] - q_sign * (
            sps[:, :, None] * sqs[:, None, :]
        )
        small = np.abs(w) < ZERO_FREQ_TOL
        denom = np.where(small, 1.0, w)
        sine_branch = 2.0 * cos_mid * sin_half / denom
        zero_branch = rg * cos_origin
        out = out + np.where(small, zero_branch, sine_branch)
    return out


def path_integral_from_table(W: np.ndarray, tables: np.ndarray) -> np.ndarray:
    """S values for a batch of antiderivative tables: (1/8) * sum(W * table)."""
    return 0.125 * np.tensordot(tables, W, axes=([1, 2], [0, 1]))


_INDEX_CACHE: dict = {}


def _pair_index_arrays(L: int, M: int):
    key = (L, M)
    if key not in _INDEX_CACHE:
        I = L * M
        l = np.arange(I, dtype=np.int64) // M
        m = np.arange(I, dtype=np.int64) % M
        lp = l[:, None] + l[None, :] + (L - 1)
        lm = l[:, None] - l[None, :] + (L - 1)
        mp = m[:, None] + m[None, :] + (M - 1)
        mm = m[:, None] - m[None, :] + (M - 1)
        _INDEX_CACHE.clear()  # keep at most one resolution resident
        _INDEX_CACHE[key] = (lp, lm, mp, mm)
    return _INDEX_CACHE[key]


def pair_matrix_from_table(table: np.ndarray, L: int, M: int) -> np.ndarray:
    """Expand a (3L-2, 3M-2) table to the symmetric I x I pair matrix.

    With table = antideriv_table of one ray this yields the matrix of
    second derivatives of the path integral with respect to coefficient
    pairs; S = 0.5 * a^T * mat * a and dS/da = mat @ a.
    """
    lp, lm, mp, mm = _pair_index_arrays(L, M)
    return 0.25 * (table[lp, mp] + table[lp, mm] + table[lm, mp] + table[lm, mm])


def contract_table_with_coeffs(table: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Contract a pair table against A: returns pair_matrix @ a without
    materializing the I x I matrix (four valid-mode correlations)."""
    L, M = A.shape
    if L * M >= 64:
        corr = lambda k: fftconvolve(table, k[::-1, ::-1], mode="valid")
    else:
        corr = lambda k: correlate2d(table, k, mode="valid")
    c1 = corr(A)
    c2 = corr(A[:, ::-1])
    c3 = corr(A[::-1, :])
    c4 = corr(A[::-1, ::-1])
    g = (
        c1[L - 1 : 2 * L - 1, M - 1 : 2 * M - 1]
        + c2[L - 1 : 2 * L - 1, 0:M]
        + c3[0:L, M - 1 : 2 * M - 1]
        + c4[0:L, 0:M]
    )
    return 0.25 * g.ravel()


def basis_flat(L: int, M: int, xt: np.ndarray, yt: np.ndarray) -> np.ndarray:
    """Cosine basis products cos(l*xt)*cos(m*yt), flattened row-major.

    xt, yt are 1-D arrays of length n; returns shape (n, L*M).
    """
    xt = np.asarray(xt, dtype=float)
    yt = np.asarray(yt, dtype=float)
    cx = np.cos(np.multiply.outer(xt, np.arange(L)))
    cy = np.cos(np.multiply.outer(yt, np.arange(M)))
    return np.einsum("nl,nm->nlm", cx, cy).reshape(len(xt), L * M)


def _chunk_size(L: int, M: int) -> int:
    cells = (3 * L - 2) * (3 * M - 2)
    return int(np.clip(6_000_000 // max(cells, 1), 16, 8192))


def path_integral_batch(A, X, Y, origins, dirs, r, W=None) -> np.ndarray:
    """Analytic S = integral of the decay field along each ray up to r[k]."""
    L, M = A.shape
    if W is None:
        W = pair_weight_table(A)
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    sxt = origins[:, 0] * (np.pi / X)
    syt = origins[:, 1] * (np.pi / Y)
    vxt = dirs[:, 0] * (np.pi / X)
    vyt = dirs[:, 1] * (np.pi / Y)
    n = len(r)
    out = np.empty(n)
    step = _chunk_size(L, M)
    for a in range(0, n, step):
        b = min(a + step, n)
        tables = antideriv_table(L, M, sxt[a:b], syt[a:b], vxt[a:b], vyt[a:b], r[a:b])
        out[a:b] = path_integral_from_table(W, tables)
    return out


def series_at(A, X, Y, x, y) -> np.ndarray:
    """Unsquared cosine series values at points (x[k], y[k])."""
    L, M = A.shape
    xt = np.asarray(x, dtype=float) * (np.pi / X)
    yt = np.asarray(y, dtype=float) * (np.pi / Y)
    c = basis_flat(L, M, np.atleast_1d(xt), np.atleast_1d(yt))
    return c @ A.ravel()


def sub_effective_integral(S: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Floored path integral used for the sub outcome.

    Matches integrating max(lambda, LAMBDA_FLOOR) for an all-zero field, and
    keeps log(1 - N) finite.
    """
    return np.maximum(S, LAMBDA_FLOOR * upper)


def scan_eval(
    A: np.ndarray,
    X: float,
    Y: float,
    origins: np.ndarray,
    dirs: np.ndarray,
    kinds: np.ndarray,
    radii: np.ndarray,
    r_min: float,
    r_max: float,
    want_grad: bool = False,
    want_hess: bool = False,
    W: np.ndarray | None = None,
):
    """Joint log-likelihood of a scan, optionally with coefficient derivatives.

    Rays are clipped to the map extent: the integration limit is r for
    returns, min(r_max, exit) for super rays, and min(r_min, exit) for sub
    rays. Return radii beyond the exit distance violate the ingestion
    contract and raise ValueError upstream; here they are assumed valid.

    Returns (per_ray_ll, grad_or_None, hess_or_None).
    """
    from .geometry import exit_distance

    L, M = A.shape
    I = L * M
    a_flat = A.ravel()
    if W is None:
        W = pair_weight_table(A)

    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    kinds = np.asarray(kinds)
    radii = np.asarray(radii, dtype=float)
    n = len(kinds)

    t_exit = exit_distance(origins, dirs, X, Y)
    upper = np.empty(n)
    is_sub = kinds == KIND_SUB
    is_ret = kinds == KIND_RETURN
    is_sup = kinds == KIND_SUPER
    upper[is_sub] = np.minimum(r_min, t_exit[is_sub])
    upper[is_ret] = radii[is_ret]
    upper[is_sup] = np.minimum(r_max, t_exit[is_sup])

    sxt = origins[:, 0] * (np.pi / X)
    syt = origins[:, 1] * (np.pi / Y)
    vxt = dirs[:, 0] * (np.pi / X)
    vyt = dirs[:, 1] * (np.pi / Y)

    if n == 0:
        return (
            np.zeros(0),
            np.zeros(I) if (want_grad or want_hess) else None,
            np.zeros((I, I)) if want_hess else None,
        )

    per_ray_ll = np.empty(n)
    acc_table = None
    hess = np.zeros((I, I)) if want_hess else None
    sub_vecs: list[np.ndarray] = []
    sub_wts: list[float] = []

    # Endpoint basis vectors for return rays (lambda and its a-gradient).
    ret_idx = np.flatnonzero(is_ret)
    if len(ret_idx):
        ex = origins[ret_idx, 0] + dirs[ret_idx, 0] * radii[ret_idx]
        ey = origins[ret_idx, 1] + dirs[ret_idx, 1] * radii[ret_idx]
        c_ret = basis_flat(L, M, ex * (np.pi / X), ey * (np.pi / Y))
        t_ret = c_ret @ a_flat
        lam_ret = t_ret * t_ret
        lam_floored = np.maximum(lam_ret, LAMBDA_FLOOR)
    else:
        c_ret = np.zeros((0, I))
        t_ret = lam_ret = lam_floored = np.zeros(0)
    ret_pos = np.full(n, -1, dtype=int)
    ret_pos[ret_idx] = np.arange(len(ret_idx))

    step = _chunk_size(L, M)
    need_tables = want_grad or want_hess
    for a0 in range(0, n, step):
        b0 = min(a0 + step, n)
        sl = slice(a0, b0)
        tables = antideriv_table(L, M, sxt[sl], syt[sl], vxt[sl], vyt[sl], upper[sl])
        S = path_integral_from_table(W, tables)
        S = np.maximum(S, 0.0)

        k = kinds[sl]
        ll = np.empty(b0 - a0)
        sigma = np.empty(b0 - a0)

        msub = k == KIND_SUB
        if np.any(msub):
            S_eff = sub_effective_integral(S[msub], upper[sl][msub])
            p_sub = np.maximum(-np.expm1(-S_eff), _PROB_FLOOR)
            ll[msub] = np.log(p_sub)
            N = np.exp(-S_eff)
            sigma[msub] = N / p_sub
            if want_hess:
                rows = np.flatnonzero(msub)
                for j, w_outer in zip(rows, -N / (p_sub * p_sub)):
                    sub_vecs.append(contract_table_with_coeffs(tables[j], A))
                    sub_wts.append(w_outer)

        mret = k == KIND_RETURN
        if np.any(mret):
            pos = ret_pos[sl][mret]
            ll[mret] = np.log(lam_floored[pos]) - S[mret]
            sigma[mret] = -1.0

        msup = k == KIND_SUPER
        if np.any(msup):
            ll[msup] = -S[msup]
            sigma[msup] = -1.0

        per_ray_ll[sl] = ll
        if need_tables:
            weighted = np.tensordot(sigma, tables, axes=(0, 0))
            acc_table = weighted if acc_table is None else acc_table + weighted

    grad = None
    if want_grad or want_hess:
        grad = contract_table_with_coeffs(acc_table, A)
        if len(ret_idx):
            grad = grad + c_ret.T @ (2.0 * t_ret / lam_floored)

    if want_hess:
        hess += pair_matrix_from_table(acc_table, L, M)
        if len(ret_idx):
            coef = 2.0 / lam_floored - 4.0 * lam_ret / (lam_floored * lam_floored)
            hess += (c_ret * coef[:, None]).T @ c_ret
        if sub_vecs:
            V = np.vstack(sub_vecs)
            wts = np.asarray(sub_wts)
            hess += (V * wts[:, None]).T @ V
        hess = 0.5 * (hess + hess.T)

    return per_ray_ll, grad, hess
