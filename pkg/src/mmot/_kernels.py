"""Compiled inner loops for plain Markov chains on the grid.

Every routine works row by row with no reduction across rows, so results
do not depend on the number of worker threads.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

# the bundled TBB is too old for numba and only produces a warning
if nb.config.THREADING_LAYER == "default":
    nb.config.THREADING_LAYER = "omp"

_opts = dict(cache=True, nogil=True, fastmath=False)
EDGE_MARGIN = 40.0


@nb.njit(parallel=True, **_opts)
def lse_rows(base, theta, x, ahead):
    """``out[i] = log sum_j exp(base[i,j] + theta[i] (x[j]-x[i]) + ahead[j])``."""
    R, M = base.shape
    out = np.empty(R)
    for i in nb.prange(R):
        th = theta[i]
        xi = x[i]
        m = -np.inf
        for j in range(M):
            a = base[i, j] + th * (x[j] - xi) + ahead[j]
            if a > m:
                m = a
        if m == -np.inf:
            out[i] = -np.inf
            continue
        s = 0.0
        for j in range(M):
            s += math.exp(base[i, j] + th * (x[j] - xi) + ahead[j] - m)
        out[i] = m + math.log(s)
    return out


@nb.njit(parallel=True, **_opts)
def lse_cols(base, theta, x, behind):
    """``out[j] = log sum_i exp(behind[i] + base[i,j] + theta[i] (x[j]-x[i]))``."""
    R, M = base.shape
    out = np.empty(M)
    for j in nb.prange(M):
        xj = x[j]
        m = -np.inf
        for i in range(R):
            a = behind[i] + base[i, j] + theta[i] * (xj - x[i])
            if a > m:
                m = a
        if m == -np.inf:
            out[j] = -np.inf
            continue
        s = 0.0
        for i in range(R):
            s += math.exp(behind[i] + base[i, j] + theta[i] * (xj - x[i]) - m)
        out[j] = m + math.log(s)
    return out


@nb.njit(**_opts)
def _row_moments(base_row, ahead, x, xi, th):
    """Drift, variance and log-normaliser of one tilted row."""
    M = base_row.shape[0]
    m = -np.inf
    for j in range(M):
        a = base_row[j] + ahead[j] + th * (x[j] - xi)
        if a > m:
            m = a
    if m == -np.inf:
        return np.nan, 0.0, -np.inf
    s0 = 0.0
    s1 = 0.0
    s2 = 0.0
    for j in range(M):
        a = base_row[j] + ahead[j]
        if a == -np.inf:
            continue
        d = x[j] - xi
        p = math.exp(a + th * d - m)
        s0 += p
        s1 += p * d
        s2 += p * d * d
    m1 = s1 / s0
    var = s2 / s0 - m1 * m1
    if var < 0.0:
        var = 0.0
    return m1, var, m + math.log(s0)


@nb.njit(parallel=True, **_opts)
def tilt_rows(base, ahead, behind, x, theta0, bound, atol, max_iter):
    """Row tilts for ``log w(i, j) = behind[i] + base[i, j] + ahead[j]`` targeting mean ``x[i]``.

    Returns ``(theta, drift, status, lognorm)`` with status 0 solved, 1 no
    support, 2 degenerate (all mass at ``x[i]``), 3 clamped (target on or
    outside the support hull), 4 unresolved. A row whose point is the edge
    of its support gets a tilt steep enough to make it a point mass to
    machine precision; rows strictly outside are clamped at ``bound``. ``lognorm[i]`` is ``log sum_j exp(base[i, j] +
    theta[i] (x[j] - x[i]) + ahead[j])`` at the returned tilt, which is what
    :func:`lse_rows` would give.
    """
    R, M = base.shape
    theta = np.empty(R)
    drift = np.empty(R)
    lognorm = np.empty(R)
    status = np.zeros(R, dtype=np.int8)
    for i in nb.prange(R):
        xi = x[i]
        small = np.inf
        big = -np.inf
        for j in range(M):
            if behind[i] > -np.inf and base[i, j] + ahead[j] > -np.inf:
                if x[j] < small:
                    small = x[j]
                if x[j] > big:
                    big = x[j]
        if big == -np.inf:
            theta[i] = 0.0
            drift[i] = np.nan
            status[i] = 1
            lognorm[i] = _row_moments(base[i], ahead, x, xi, 0.0)[2]
            continue
        if big == small and big == xi:
            theta[i] = 0.0
            drift[i] = 0.0
            status[i] = 2
            lognorm[i] = _row_moments(base[i], ahead, x, xi, 0.0)[2]
            continue
        if xi == small or xi == big:
            # target on the hull edge and carrying weight itself: the only
            # centred law is the point mass, reached by a tilt steep enough
            # to push every other column below exp(-EDGE_MARGIN)
            own = base[i, i] + ahead[i]
            if own > -np.inf:
                gap = np.inf
                rise = -np.inf
                for j in range(M):
                    a = base[i, j] + ahead[j]
                    if j != i and a > -np.inf:
                        g = abs(x[j] - xi)
                        if g < gap:
                            gap = g
                        if a - own > rise:
                            rise = a - own
                th = (max(rise, 0.0) + EDGE_MARGIN) / gap
                th = -th if xi == small else th
                f, _, ln = _row_moments(base[i], ahead, x, xi, th)
                theta[i] = th
                drift[i] = f
                lognorm[i] = ln
                status[i] = 3
                continue
        if xi <= small or xi >= big:
            th = -bound if xi <= small else bound
            f, _, ln = _row_moments(base[i], ahead, x, xi, th)
            theta[i] = th
            drift[i] = f
            lognorm[i] = ln
            status[i] = 3
            continue
        scale = max(big - xi, xi - small)
        lo = -bound
        hi = bound
        th = min(max(theta0[i], lo), hi)
        if not np.isfinite(th):
            th = 0.0
        st = 4
        f = np.nan
        ln = np.nan
        for _ in range(max_iter):
            f, var, ln = _row_moments(base[i], ahead, x, xi, th)
            if abs(f) <= atol:
                st = 0
                break
            if f > 0:
                hi = th
            else:
                lo = th
            if hi - lo <= 1e-15 * (1.0 + abs(th)):
                break
            step = th - f / var if var > 0 else np.nan
            if not (step > lo and step < hi):
                th = 0.5 * (lo + hi)
                continue
            if abs(f / var) * scale <= 1e-12:
                # the remaining Newton move is negligible; keep the evaluated
                # tilt so the normaliser matches it exactly
                f = 0.0
                st = 0
                break
            th = step
        else:
            f, var, ln = _row_moments(base[i], ahead, x, xi, th)
        theta[i] = th
        drift[i] = f
        lognorm[i] = ln
        status[i] = st
    return theta, drift, status, lognorm


def set_threads(n):
    if n:
        nb.set_num_threads(max(1, min(int(n), nb.config.NUMBA_NUM_THREADS)))
