"""Discrete reference martingale ``Q``: a Markov chain on the grid.

Each transition row is a discretised Gaussian (or a two-point random walk)
with variance ``sigma^2 dt``, floored so every entry is positive and then
exponentially tilted so the row mean equals its starting point. On a bounded
grid the two end rows cannot be centred; they are pulled as close as the
tilt allows and the leftover drift is reported.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._tilt import solve_tilts
from .exceptions import TiltDiverged, ValidationError
from .grid import Grid


@dataclass(frozen=True, eq=False)
class ReferenceChain:
    grid: Grid
    init: np.ndarray
    kernels: tuple
    sigma: float
    times: np.ndarray
    boundary_defect: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.kernels)

    def log_kernels(self):
        return [np.log(K) for K in self.kernels]

    def row_means(self):
        return [K @ self.grid.points for K in self.kernels]

    def to_json(self) -> dict:
        return {
            "grid": self.grid.points.tolist(),
            "times": self.times.tolist(),
            "sigma": self.sigma,
            "init": self.init.tolist(),
            "kernels": [K.tolist() for K in self.kernels],
            "boundary_defect": self.boundary_defect.tolist(),
        }

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


def _gaussian_rows(x, sd):
    d = x[None, :] - x[:, None]
    L = -0.5 * (d / sd) ** 2
    W = np.exp(L - L.max(axis=1, keepdims=True))
    return W / W.sum(axis=1, keepdims=True)


def _binomial_rows(x, step):
    """Half mass at ``x - step`` and ``x + step``, each split linearly onto the grid."""
    M = x.size
    W = np.zeros((M, M))
    rows = np.arange(M)
    for sgn in (-1.0, 1.0):
        z = np.clip(x + sgn * step, x[0], x[-1])
        j = np.clip(np.searchsorted(x, z, side="right") - 1, 0, M - 2)
        lam = (z - x[j]) / (x[j + 1] - x[j])
        np.add.at(W, (rows, j), 0.5 * (1 - lam))
        np.add.at(W, (rows, j + 1), 0.5 * lam)
    return W


def _centre_rows(W, x, floor, boundary_slack):
    M = x.size
    W = np.maximum(W, floor)
    W /= W.sum(axis=1, keepdims=True)
    gap = np.min(np.diff(x))
    bound = 200.0 / gap
    targets = x.copy()
    # end rows cannot reach their own point; aim inside by at most the slack
    m = W @ x
    targets[0] = x[0] + min(m[0] - x[0], boundary_slack)
    targets[-1] = x[-1] - min(x[-1] - m[-1], boundary_slack)
    theta, drift, flagged = solve_tilts(np.log(W), x, targets, bound, atol=1e-14 * max(1.0, np.abs(x).max()))
    if flagged[1:-1].any():
        bad = np.flatnonzero(flagged[1:-1]) + 1
        raise TiltDiverged(f"reference rows {bad.tolist()[:5]} could not be centred; grid too coarse for sigma")
    A = np.log(W) + theta[:, None] * (x[None, :] - targets[:, None])
    P = np.exp(A - A.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    # re-floor; the induced drift is O(M * floor) and removed by a second tilt
    # a small margin keeps the second tilt from dipping back under the floor
    for _ in range(3):
        if P.min() >= floor:
            break
        P = np.maximum(P, floor * 1.001)
        P /= P.sum(axis=1, keepdims=True)
        theta, _, flagged = solve_tilts(np.log(P), x, targets, bound, atol=1e-14 * max(1.0, np.abs(x).max()))
        A = np.log(P) + theta[:, None] * (x[None, :] - targets[:, None])
        P = np.exp(A - A.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
    return P


def build_reference(grid: Grid, times, sigma: float = 0.2, floor: float = 1e-12,
                    mode: str = "gaussian", init=None) -> ReferenceChain:
    """Reference chain with one kernel per consecutive pair of ``times``.

    ``sigma`` is an absolute volatility in grid units per sqrt(year). The
    initial law defaults to uniform on the grid.
    """
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    if not 0 < floor <= 1e-6:
        raise ValidationError("floor must lie in (0, 1e-6]")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise ValidationError("need at least two strictly increasing times")
    x = grid.points
    gap = np.min(np.diff(x))
    kernels, defects = [], []
    for dt in np.diff(times):
        sd = sigma * np.sqrt(dt)
        if mode == "gaussian":
            W = _gaussian_rows(x, max(sd, 1e-3 * gap))
        elif mode == "binomial":
            W = _binomial_rows(x, sd)
        else:
            raise ValidationError(f"unknown reference mode {mode!r}")
        P = _centre_rows(W, x, floor, boundary_slack=gap)
        P.setflags(write=False)
        kernels.append(P)
        defects.append(np.abs(P @ x - x)[[0, -1]])
    if init is None:
        init = np.full(grid.size, 1.0 / grid.size)
    init = np.asarray(init, dtype=float)
    init.setflags(write=False)
    return ReferenceChain(grid, init, tuple(kernels), float(sigma), times, np.array(defects))
