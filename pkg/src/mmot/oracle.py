"""Exact unregularised bounds for tiny instances.

The linear program ranges over probabilities of whole paths, so it makes no
Markov or pairwise assumption. It is solved with a dense two-phase tableau
simplex using Bland's rule, which cannot cycle.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import InfeasibleLP, ValidationError
from .marginals import MarginalSequence

MAX_POINTS = 8
MAX_STEPS = 3
MAX_PATHS = 4096


@dataclass(frozen=True)
class TinyInstance:
    marginals: MarginalSequence
    cost: np.ndarray  # shape (M,) * (N + 1)

    def __post_init__(self):
        M = self.marginals.grid.size
        N = self.marginals.n_steps
        if M > MAX_POINTS:
            raise ValidationError(f"oracle grids are limited to {MAX_POINTS} points")
        if N > MAX_STEPS or N < 1:
            raise ValidationError(f"oracle instances need 1 <= N <= {MAX_STEPS}")
        if M ** (N + 1) > MAX_PATHS:
            raise ValidationError(f"oracle instances are limited to {MAX_PATHS} paths")
        c = np.asarray(self.cost, dtype=float)
        if c.shape != (M,) * (N + 1):
            raise ValidationError(f"cost table must have shape {(M,) * (N + 1)}")
        object.__setattr__(self, "cost", c)

    @classmethod
    def from_pairwise(cls, marginals, tables, unary=None):
        """Full path table ``sum_t c_t(x_t, x_{t+1}) (+ f(x_N))``."""
        M = marginals.grid.size
        N = marginals.n_steps
        c = np.zeros((M,) * (N + 1))
        for t, T in enumerate(tables):
            shape = [1] * (N + 1)
            shape[t], shape[t + 1] = M, M
            c = c + np.asarray(T).reshape(shape)
        if unary is not None:
            shape = [1] * N + [M]
            c = c + np.asarray(unary).reshape(shape)
        return cls(marginals, c)

    def constraints(self):
        """Equality system ``A p = b`` over paths in C order."""
        seq = self.marginals
        x = seq.grid.points
        M = x.size
        N = seq.n_steps
        paths = np.array(list(itertools.product(range(M), repeat=N + 1)))
        rows, rhs = [], []
        for t in range(N + 1):
            for i in range(M):
                rows.append((paths[:, t] == i).astype(float))
                rhs.append(seq.weights[t][i])
        for t in range(1, N + 1):
            inc = x[paths[:, t]] - x[paths[:, t - 1]]
            for i in range(M):
                rows.append(np.where(paths[:, t - 1] == i, inc, 0.0))
                rhs.append(0.0)
        return np.array(rows), np.array(rhs), paths


def simplex(c, A, b, tol=1e-11, max_pivots=100_000):
    """Minimise ``c @ p`` subject to ``A p = b``, ``p >= 0``.

    Returns ``(value, p, pivots)``. Raises :class:`InfeasibleLP` when phase
    one cannot drive the artificial variables to zero.
    """
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    # tableau: [A | I | b]; the objective row is kept separately
    T = np.hstack([A, np.eye(m), b[:, None]])
    basis = list(range(n, n + m))
    pivots = 0

    def run(cost_row, allowed):
        nonlocal pivots
        while True:
            cb = cost_row[basis]
            reduced = cost_row[:-1] - cb @ T[:, :-1]
            cand = np.flatnonzero((reduced < -tol) & allowed)
            if cand.size == 0:
                return
            j = cand[0]  # Bland: smallest entering index
            col = T[:, j]
            pos = col > tol
            if not pos.any():
                raise InfeasibleLP("objective unbounded below")
            ratios = np.full(m, np.inf)
            ratios[pos] = T[pos, -1] / col[pos]
            best = ratios.min()
            ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
            r = min(ties, key=lambda i: basis[i])  # Bland: smallest leaving index
            pivot(r, j)
            pivots += 1
            if pivots > max_pivots:
                raise InfeasibleLP("pivot limit reached")

    def pivot(r, j):
        T[r] /= T[r, j]
        others = np.arange(T.shape[0]) != r
        T[others] -= np.outer(T[others, j], T[r])
        basis[r] = j

    # phase one: minimise the sum of artificials
    cost1 = np.concatenate([np.zeros(n), np.ones(m), [0.0]])
    run(cost1, np.ones(n + m, dtype=bool))
    infeas = sum(T[i, -1] for i in range(len(basis)) if basis[i] >= n)
    if infeas > 1e-9:
        raise InfeasibleLP(f"no feasible martingale coupling (phase-one residual {infeas:.3g})")
    # drive remaining artificials out or drop redundant rows
    r = 0
    while r < len(basis):
        if basis[r] >= n:
            j = np.flatnonzero(np.abs(T[r, :n]) > 1e-9)
            if j.size:
                pivot(r, j[0])
            else:
                T = np.delete(T, r, axis=0)
                del basis[r]
                m -= 1
                continue
        r += 1
    T = np.hstack([T[:, :n], T[:, -1:]])
    cost2 = np.concatenate([c, [0.0]])
    run(cost2, np.ones(n, dtype=bool))
    p = np.zeros(n)
    for i, j in enumerate(basis):
        p[j] = T[i, -1]
    p = np.maximum(p, 0.0)
    return float(c @ p), p, pivots


@dataclass
class LPBounds:
    min_value: float
    max_value: float
    argmin: np.ndarray  # path probabilities, shape (M,) * (N + 1)
    argmax: np.ndarray

    def __iter__(self):
        return iter((self.min_value, self.max_value, self.argmin))


def lp_bounds(inst: TinyInstance) -> LPBounds:
    A, b, _ = inst.constraints()
    c = inst.cost.ravel()
    lo, p_lo, _ = simplex(c, A, b)
    hi_neg, p_hi, _ = simplex(-c, A, b)
    shape = inst.cost.shape
    return LPBounds(lo, -hi_neg, p_lo.reshape(shape), p_hi.reshape(shape))
