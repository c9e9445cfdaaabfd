"""Seeded problem generators shared by the studies and the test-suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, make_uniform
from .marginals import MarginalSequence, ModelParams, _lognormal_on_grid, centred_sequence, generate
from .reference import ReferenceChain, build_reference


@dataclass
class Fixture:
    grid: Grid
    times: np.ndarray
    marginals: MarginalSequence
    ref: ReferenceChain


def gbm_fixture(n_steps=10, m=150, vol=0.2, horizon=1.0, lo=0.4, hi=2.0, ref_sigma=None) -> Fixture:
    grid = make_uniform(lo, hi, m)
    times = np.linspace(0.0, horizon, n_steps + 1)
    seq = generate(ModelParams(model="gbm", vol=vol), times, grid)
    ref = build_reference(grid, times, sigma=vol if ref_sigma is None else ref_sigma)
    return Fixture(grid, times, seq, ref)


def random_lognormal_mixture(rng, n_steps, m) -> Fixture:
    """Marginals of a random mixture of driftless lognormals, centred at 1."""
    rng = np.random.default_rng(rng)
    k = int(rng.integers(1, 4))
    vols = rng.uniform(0.1, 0.4, k)
    mix = rng.dirichlet(np.ones(k))
    horizon = rng.uniform(0.25, 2.0)
    sd = vols.max() * np.sqrt(horizon)
    grid = make_uniform(max(1e-3, np.exp(-4.5 * sd)), np.exp(4.5 * sd), m)
    times = np.linspace(0.0, horizon, n_steps + 1)
    rows = [sum(w * _lognormal_on_grid(grid, 1.0, v * np.sqrt(t)) for w, v in zip(mix, vols)) for t in times]
    seq = centred_sequence(grid, rows, times, 1.0)
    return Fixture(grid, times, seq, build_reference(grid, times, sigma=0.2))


def random_martingale_kernel(rng, x, stay=0.3, spread=0.2):
    """Row-stochastic matrix whose rows have mean ``x[i]``.

    Each interior row keeps some mass in place, sends part to one random
    point on each side and, with weight ``spread``, part to the two grid
    ends. The last piece makes the pushed law strictly larger in convex
    order at every interior strike.
    """
    rng = np.random.default_rng(rng)
    M = x.size
    K = np.zeros((M, M))

    def two_point(i, j, k, mass):
        a, b = x[i] - x[j], x[k] - x[i]
        K[i, j] += mass * b / (a + b)
        K[i, k] += mass * a / (a + b)

    for i in range(M):
        if i == 0 or i == M - 1:
            K[i, i] = 1.0
            continue
        s = stay * rng.uniform(0.0, 1.0)
        e = spread * rng.uniform(0.5, 1.0)
        K[i, i] = s
        two_point(i, int(rng.integers(0, i)), int(rng.integers(i + 1, M)), 1 - s - e)
        two_point(i, 0, M - 1, e)
    return K


def tiny_sequence(rng, n_steps, m) -> MarginalSequence:
    """Small instance built by pushing an interior law through martingale kernels.

    Convex order holds by construction and every intermediate row can be
    centred, so the unregularised problem is feasible.
    """
    rng = np.random.default_rng(rng)
    x = np.sort(rng.uniform(0.0, 1.0, m))
    x[0], x[-1] = 0.0, 1.0
    x = np.round(x, 6)
    while np.any(np.diff(x) <= 1e-3):
        x = np.sort(np.r_[0.0, rng.uniform(0.05, 0.95, m - 2), 1.0])
    w = np.zeros(m)
    inner = rng.choice(np.arange(1, m - 1), size=2, replace=False)
    w[inner] = rng.dirichlet(np.ones(2))
    rows = [w]
    for _ in range(n_steps):
        w = w @ random_martingale_kernel(rng, x)
        rows.append(w)
    return MarginalSequence(Grid(x), np.array(rows), np.arange(n_steps + 1, dtype=float))


def spread_last(seq: MarginalSequence, lam, shift=1) -> MarginalSequence:
    """Mix the last marginal with a symmetric ``shift``-cell spread of itself.

    The spread is a martingale move on a uniform grid, so the perturbed
    sequence stays in convex order and keeps its mean.
    """
    w = seq.weights[-1]
    M = w.size
    moved = np.zeros(M)
    for i, p in enumerate(w):
        if p == 0:
            continue
        if i - shift < 0 or i + shift >= M:
            moved[i] += p
        else:
            moved[i - shift] += 0.5 * p
            moved[i + shift] += 0.5 * p
    rows = seq.weights.copy()
    rows[-1] = (1 - lam) * w + lam * moved
    return MarginalSequence(seq.grid, rows, seq.times)
