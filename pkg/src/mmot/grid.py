"""Discrete one-dimensional state spaces.

A :class:`Grid` is an ordered set of asset levels. Uniform grids come from
:func:`make_uniform`; :func:`make_sparse` refines a binary interval tree
where the marginals carry mass, so concentrated laws get resolution where it
matters and few points elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyGrid, InvalidBounds

MAX_SPARSE_DEPTH = 30


@dataclass(frozen=True, eq=False)
class Grid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise InvalidBounds(f"a grid needs at least 2 points, got {pts.size}")
        if not np.all(np.isfinite(pts)):
            raise InvalidBounds("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidBounds("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    @property
    def size(self) -> int:
        return int(self.points.size)

    def __len__(self):
        return self.size

    def diameter(self) -> float:
        return self.hi - self.lo

    def spacing(self) -> np.ndarray:
        return np.diff(self.points)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash(self.points.tobytes())

    def to_json(self) -> dict:
        return {"grid": self.points.tolist()}

    @classmethod
    def from_json(cls, obj) -> "Grid":
        if isinstance(obj, dict):
            obj = obj["grid"]
        return cls(np.asarray(obj, dtype=float))


def make_uniform(lo: float, hi: float, m: int) -> Grid:
    """Equally spaced grid with ``m`` points, endpoints included."""
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise InvalidBounds(f"need lo < hi, got lo={lo}, hi={hi}")
    if int(m) != m or m < 2:
        raise InvalidBounds(f"need an integer m >= 2, got {m}")
    return Grid(np.linspace(lo, hi, int(m)))


@dataclass(frozen=True)
class SparseGridConfig:
    threshold: float = 0.01
    max_depth: int = 8

    def __post_init__(self):
        if not self.threshold >= 0:
            raise InvalidBounds("threshold must be >= 0")
        if int(self.max_depth) != self.max_depth or not 0 <= self.max_depth <= MAX_SPARSE_DEPTH:
            raise InvalidBounds(f"max_depth must be an integer in [0, {MAX_SPARSE_DEPTH}]")


@dataclass
class SparseTree:
    """Leaves of the refinement tree, kept sorted left to right."""

    lo: np.ndarray
    hi: np.ndarray
    depth: np.ndarray
    splits: list = field(default_factory=list)

    @property
    def centroids(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


def cell_masses(points, weights, lo, hi, domain_hi) -> np.ndarray:
    """Mass of each cell ``[lo, hi)``; the cell ending at ``domain_hi`` is closed.

    ``weights`` may be 2-D (one row per marginal); the result then has one
    row per marginal as well.
    """
    points = np.asarray(points, dtype=float)
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    cum = np.concatenate([np.zeros((weights.shape[0], 1)), np.cumsum(weights, axis=1)], axis=1)
    left = np.searchsorted(points, lo, side="left")
    right = np.where(hi >= domain_hi, points.size, np.searchsorted(points, hi, side="left"))
    return cum[:, right] - cum[:, left]


def build_sparse_tree(points, weights, cfg: SparseGridConfig, lo=None, hi=None) -> SparseTree:
    """Binary interval refinement driven by ``max_t mass(C) * diam(C) / D``."""
    points = np.asarray(points, dtype=float)
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    lo = points[0] if lo is None else float(lo)
    hi = points[-1] if hi is None else float(hi)
    diam = hi - lo
    if diam <= 0:
        raise InvalidBounds("sparse grid domain must have positive width")

    cells_lo = np.array([lo])
    cells_hi = np.array([hi])
    depth = np.array([0])
    tree = SparseTree(cells_lo, cells_hi, depth)
    for d in range(cfg.max_depth):
        mass = cell_masses(points, weights, cells_lo, cells_hi, hi).max(axis=0)
        score = mass * (cells_hi - cells_lo) / diam
        split = score > cfg.threshold
        if not split.any():
            break
        tree.splits.append(int(split.sum()))
        mid = 0.5 * (cells_lo + cells_hi)
        new_lo, new_hi, new_depth = [], [], []
        for a, b, m, s, dep in zip(cells_lo, cells_hi, mid, split, depth):
            if s:
                new_lo += [a, m]
                new_hi += [m, b]
                new_depth += [dep + 1, dep + 1]
            else:
                new_lo.append(a)
                new_hi.append(b)
                new_depth.append(dep)
        cells_lo, cells_hi, depth = np.array(new_lo), np.array(new_hi), np.array(new_depth)
    tree.lo, tree.hi, tree.depth = cells_lo, cells_hi, depth
    return tree


def make_sparse(marginals, cfg: SparseGridConfig) -> Grid:
    """Adaptive grid of leaf-cell centroids for a :class:`MarginalSequence`.

    The enclosing interval is the source grid's ``[lo, hi]``. A cell is split
    in two at its midpoint when its score strictly exceeds the threshold.
    """
    src = marginals.grid
    tree = build_sparse_tree(src.points, marginals.weights, cfg)
    centroids = tree.centroids
    if centroids.size < 2:
        raise EmptyGrid(
            f"sparse refinement produced {centroids.size} leaf; lower the threshold "
            "or raise max_depth"
        )
    return Grid(centroids)
