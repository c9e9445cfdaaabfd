"""Row-wise exponential tilting.

Given unnormalised log-weights ``L[r, :]`` on points ``y`` and a target
``x[r]``, find ``theta[r]`` so that the law ``exp(L + theta (y - x))`` has
mean ``x[r]``. The tilted mean is strictly increasing in ``theta``, so the
root is unique whenever ``x`` lies strictly inside the convex hull of the
row's support. Rows whose target sits on or outside the hull are clamped at
``+-bound`` and flagged.
"""
from __future__ import annotations

import numpy as np

from ._kernels import EDGE_MARGIN
from .exceptions import TiltDiverged


def _moments(L, d, theta):
    a = L + theta[:, None] * d
    amax = np.max(a, axis=1, keepdims=True)
    p = np.exp(a - amax)
    s = p.sum(axis=1)
    m1 = (p * d).sum(axis=1) / s
    m2 = (p * d * d).sum(axis=1) / s
    return m1, np.maximum(m2 - m1 * m1, 0.0)


def solve_tilts(L, y, x, bound, theta0=None, atol=1e-13, max_iter=100):
    """Vectorised safeguarded Newton for the tilt parameters.

    Returns ``(theta, drift, flagged)`` where ``drift`` is the residual
    ``mean - x`` at the returned ``theta`` and ``flagged`` marks rows whose
    target is outside the support hull (``theta`` clamped) or that could not
    be solved within ``max_iter``. Rows with no support at all get
    ``theta = 0`` and ``drift = nan``.
    """
    L = np.asarray(L, dtype=float)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    R = L.shape[0]
    theta = np.zeros(R) if theta0 is None else np.array(theta0, dtype=float, copy=True)
    theta = np.clip(np.nan_to_num(theta), -bound, bound)
    drift = np.full(R, np.nan)
    flagged = np.zeros(R, dtype=bool)

    finite = np.isfinite(L)
    has_support = finite.any(axis=1)
    big = np.where(finite, y[None, :], -np.inf).max(axis=1)
    small = np.where(finite, y[None, :], np.inf).min(axis=1)
    degenerate = has_support & (big == small) & (big == x)
    # target on the hull edge with weight of its own: the point mass is the
    # only centred law, so tilt far enough to bury every other column
    own_col = np.argmin(np.abs(y[None, :] - x[:, None]), axis=1)
    rows = np.arange(R)
    own = np.where(y[own_col] == x, L[rows, own_col], -np.inf)
    edge = has_support & ~degenerate & np.isfinite(own) & ((x == small) | (x == big))
    if edge.any():
        e = np.flatnonzero(edge)
        d = np.abs(y[None, :] - x[e, None])
        others = finite[e] & (d > 0)
        gap = np.where(others, d, np.inf).min(axis=1)
        rise = np.where(others, L[e] - own[e, None], -np.inf).max(axis=1)
        steep = (np.maximum(rise, 0.0) + EDGE_MARGIN) / gap
        theta[e] = np.where(x[e] == small[e], -steep, steep)
        flagged[edge] = True
    below = has_support & ~degenerate & ~edge & (x <= small)
    above = has_support & ~degenerate & ~edge & (x >= big)

    theta[~has_support] = 0.0
    theta[degenerate] = 0.0
    # target at/left of support: push mass left as far as allowed
    theta[below] = -bound
    theta[above] = bound
    flagged[below | above] = True

    active = np.flatnonzero(has_support & ~degenerate & ~edge & ~below & ~above)
    bound = float(bound)
    lo = np.full(active.size, -bound)
    hi = np.full(active.size, bound)
    th = theta[active]
    La = L[active]
    da = y[None, :] - x[active, None]
    scale = np.maximum(np.abs(da).max(axis=1), 1e-300)
    done = np.zeros(active.size, dtype=bool)
    stuck_all = np.zeros(active.size, dtype=bool)
    res = np.full(active.size, np.nan)
    for _ in range(max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        f, v = _moments(La[idx], da[idx], th[idx])
        res[idx] = f
        ok = np.abs(f) <= atol
        done[idx[ok]] = True
        idx, f, v = idx[~ok], f[~ok], v[~ok]
        if idx.size == 0:
            break
        pos = f > 0
        hi[idx[pos]] = th[idx[pos]]
        lo[idx[~pos]] = th[idx[~pos]]
        with np.errstate(divide="ignore", invalid="ignore"):
            delta = f / v
        step = th[idx] - delta
        bad = ~np.isfinite(step) | (step <= lo[idx]) | (step >= hi[idx])
        step[bad] = 0.5 * (lo[idx][bad] + hi[idx][bad])
        # a Newton step this small leaves a residual far below atol
        tiny = ~bad & (np.abs(delta) * scale[idx] <= 1e-12)
        res[idx[tiny]] = 0.0
        # bracket collapsed onto the clamp: the root lies beyond it
        stuck = (hi[idx] - lo[idx]) <= 1e-15 * (1.0 + np.abs(th[idx]))
        th[idx] = step
        done[idx[tiny | stuck]] = True
        stuck_all[idx[stuck & ~tiny]] = True
    unresolved = ~done | stuck_all
    theta[active] = th
    drift[active] = res
    flagged[active[unresolved]] = True
    # clamped and edge rows: report the drift they are left with
    drift[degenerate] = 0.0
    clamped = np.flatnonzero(below | above | edge)
    if clamped.size:
        f, _ = _moments(L[clamped], y[None, :] - x[clamped, None], theta[clamped])
        drift[clamped] = f
    return theta, drift, flagged


def tilt_to_mean(weights, points, target, max_iter=100, atol=1e-14):
    """Exponentially tilt a probability vector so its mean equals ``target``.

    Raises :class:`TiltDiverged` when the target is not strictly inside the
    support hull or Newton fails.
    """
    w = np.asarray(weights, dtype=float)
    pts = np.asarray(points, dtype=float)
    with np.errstate(divide="ignore"):
        L = np.log(w)[None, :]
    gap = np.min(np.diff(pts)) if pts.size > 1 else 1.0
    bound = 200.0 / gap
    theta, drift, flagged = solve_tilts(
        L, pts, np.array([float(target)]), bound, atol=atol * max(1.0, abs(target)), max_iter=max_iter
    )
    if flagged[0] or not np.isfinite(drift[0]):
        raise TiltDiverged(f"cannot tilt to mean {target}: outside support hull or Newton failed")
    a = L[0] + theta[0] * (pts - target)
    p = np.exp(a - a.max())
    return p / p.sum()
