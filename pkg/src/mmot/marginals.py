"""Marginal laws on a grid.

Holds the per-maturity probability vectors, the convex-order diagnostic,
synthetic generators (GBM, Merton jump-diffusion, Heston) and calibration of
a marginal from call quotes.

All generated marginals live in de-drifted (forward) units: the price at
time ``t`` is divided by ``exp(r t)`` so every marginal has mean ``S0``.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, special

from ._tilt import tilt_to_mean
from .exceptions import (
    ConvexOrderViolation,
    GridMismatch,
    Infeasible,
    NotConverged,
    ValidationError,
)
from .grid import Grid

logger = logging.getLogger(__name__)

DEFAULT_PATHS = 10_000
_CHUNK = 2_000


@dataclass(frozen=True, eq=False)
class Marginal:
    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = _as_probability(self.weights, self.grid.size)
        object.__setattr__(self, "weights", w)

    def mean(self) -> float:
        return float(self.weights @ self.grid.points)

    def variance(self) -> float:
        m = self.mean()
        return float(self.weights @ (self.grid.points - m) ** 2)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.weights)

    def call_prices(self, strikes) -> np.ndarray:
        strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
        return np.maximum(self.grid.points[None, :] - strikes[:, None], 0.0) @ self.weights

    def quantile(self, q: float) -> float:
        idx = np.searchsorted(self.cdf(), q, side="left")
        return float(self.grid.points[min(idx, self.grid.size - 1)])


def _as_probability(weights, m, atol=1e-9):
    w = np.array(weights, dtype=float)
    if w.shape != (m,):
        raise ValidationError(f"weights must have shape ({m},), got {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < -atol):
        raise ValidationError("weights must be finite and non-negative")
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if abs(s - 1.0) > atol:
        raise ValidationError(f"weights must sum to 1, got {s!r}")
    w /= s
    w.setflags(write=False)
    return w


class MarginalSequence:
    """Marginals ``mu_0 .. mu_N`` on one common grid at increasing times."""

    def __init__(self, grid: Grid, weights, times=None):
        if not isinstance(grid, Grid):
            grid = Grid(grid)
        w = np.atleast_2d(np.asarray(weights, dtype=float))
        if w.ndim != 2 or w.shape[1] != grid.size:
            raise ValidationError(f"weights must have shape (N+1, {grid.size}), got {w.shape}")
        if w.shape[0] < 1:
            raise ValidationError("need at least one marginal")
        rows = np.stack([_as_probability(r, grid.size) for r in w])
        rows.setflags(write=False)
        if times is None:
            times = np.arange(rows.shape[0], dtype=float)
        times = np.asarray(times, dtype=float)
        if times.shape != (rows.shape[0],):
            raise ValidationError("need one time per marginal")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("times must be strictly increasing")
        times.setflags(write=False)
        self.grid = grid
        self.weights = rows
        self.times = times

    @classmethod
    def from_marginals(cls, marginals: Sequence[Marginal], times=None):
        grids = {m.grid for m in marginals}
        if len(grids) != 1:
            raise GridMismatch("all marginals must share one grid")
        return cls(marginals[0].grid, np.stack([m.weights for m in marginals]), times)

    @property
    def n_steps(self) -> int:
        return self.weights.shape[0] - 1

    def __len__(self):
        return self.weights.shape[0]

    def __getitem__(self, t) -> Marginal:
        return Marginal(self.grid, self.weights[t])

    def means(self) -> np.ndarray:
        return self.weights @ self.grid.points

    def append(self, marginal: Marginal, time: float) -> "MarginalSequence":
        if marginal.grid != self.grid:
            raise GridMismatch("appended marginal lives on a different grid")
        if time <= self.times[-1]:
            raise ValidationError("appended time must exceed the last time")
        return MarginalSequence(
            self.grid, np.vstack([self.weights, marginal.weights]), np.append(self.times, time)
        )

    def head(self, n: int) -> "MarginalSequence":
        return MarginalSequence(self.grid, self.weights[:n], self.times[:n])

    def to_json(self) -> dict:
        return {
            "grid": self.grid.points.tolist(),
            "times": self.times.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> "MarginalSequence":
        try:
            return cls(Grid(obj["grid"]), obj["weights"], obj.get("times"))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed marginal file: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "MarginalSequence":
        with open(path) as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}: not valid JSON ({exc.msg})") from exc
        return cls.from_json(obj)


# ---------------------------------------------------------------------------
# convex order


@dataclass
class ConvexOrderReport:
    ok: bool
    worst_strike: Optional[float]
    worst_violation: float
    mean_defect: float
    worst_time: Optional[int] = None


def call_curves(seq: MarginalSequence) -> np.ndarray:
    """Call prices ``C_t(K)`` at every grid strike, shape ``(N+1, M)``."""
    x = seq.grid.points
    payoff = np.maximum(x[:, None] - x[None, :], 0.0)
    return seq.weights @ payoff


def check_convex_order(seq: MarginalSequence, tol: float = 1e-8) -> ConvexOrderReport:
    """Equal means and pointwise non-decreasing call curves.

    On a grid both conditions together are equivalent to convex order,
    because call curves are piecewise linear between grid strikes.
    """
    means = seq.means()
    mean_defect = float(np.max(np.abs(means - means[0]))) if len(seq) else 0.0
    if len(seq) < 2:
        return ConvexOrderReport(mean_defect <= tol, None, 0.0, mean_defect)
    C = call_curves(seq)
    shortfall = C[:-1] - C[1:]
    t, k = np.unravel_index(np.argmax(shortfall), shortfall.shape)
    worst = float(shortfall[t, k])
    ok = mean_defect <= tol and worst <= tol
    return ConvexOrderReport(ok, float(seq.grid.points[k]), max(worst, 0.0), mean_defect, int(t))


def require_convex_order(seq: MarginalSequence, tol: float = 1e-8) -> ConvexOrderReport:
    rep = check_convex_order(seq, tol)
    if not rep.ok:
        raise ConvexOrderViolation(
            f"marginals violate convex order: mean defect {rep.mean_defect:.3g}, "
            f"call shortfall {rep.worst_violation:.3g} at strike {rep.worst_strike} "
            f"(t={rep.worst_time})",
            rep,
        )
    return rep


# ---------------------------------------------------------------------------
# discretisation helpers


def _hat_from_partials(x, mass, first):
    """Split interval masses onto the two bracketing grid points, mean-preserving.

    ``mass[i]`` / ``first[i]`` are the mass and first moment inside
    ``[x_i, x_{i+1}]``; ``mass[-1]``/``mass[M-1]`` style tails are handled by
    the caller.
    """
    gap = np.diff(x)
    left = (x[1:] * mass - first) / gap
    right = (first - x[:-1] * mass) / gap
    w = np.zeros(x.size)
    w[:-1] += left
    w[1:] += right
    return w


def project_points(points, probs, grid: Grid) -> np.ndarray:
    """Linear-interpolation projection of a discrete law onto ``grid``.

    Mass at a point between two grid nodes is split so the mean is kept.
    This map preserves convex order. Points outside the grid are clamped to
    the nearest end.
    """
    x = grid.points
    p = np.asarray(probs, dtype=float)
    z = np.clip(np.asarray(points, dtype=float), x[0], x[-1])
    j = np.clip(np.searchsorted(x, z, side="right") - 1, 0, x.size - 2)
    lam = (z - x[j]) / (x[j + 1] - x[j])
    w = np.bincount(j, weights=p * (1 - lam), minlength=x.size)
    w += np.bincount(j + 1, weights=p * lam, minlength=x.size)
    return w / w.sum()


def project_marginals(seq: MarginalSequence, grid: Grid, mean=None) -> MarginalSequence:
    """Re-express marginals on another grid, then tilt every mean to ``mean``."""
    target = float(seq.means()[0]) if mean is None else float(mean)
    rows = []
    for w in seq.weights:
        q = project_points(seq.grid.points, w, grid)
        if abs(q @ grid.points - target) > 1e-13 * max(1.0, abs(target)):
            q = tilt_to_mean(q, grid.points, target)
        rows.append(q)
    return MarginalSequence(grid, np.array(rows), seq.times)


def _lognormal_on_grid(grid: Grid, mean: float, sd_log: float) -> np.ndarray:
    x = grid.points
    if sd_log <= 0:
        return project_points([mean], [1.0], grid)
    m = np.log(mean) - 0.5 * sd_log**2
    with np.errstate(divide="ignore"):
        z = (np.log(np.maximum(x, 0.0)) - m) / sd_log
    cdf = special.ndtr(z)
    cdf1 = special.ndtr(z - sd_log) * mean
    mass = np.diff(cdf)
    first = np.diff(cdf1)
    w = _hat_from_partials(x, mass, first)
    w[0] += cdf[0]
    w[-1] += 1.0 - cdf[-1]
    return np.clip(w, 0.0, None) / w.sum()


def _kde_on_grid(grid: Grid, samples: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian-KDE law integrated against the grid's hat functions."""
    x = grid.points
    w = np.zeros(x.size)
    for start in range(0, samples.size, _CHUNK):
        c = samples[start : start + _CHUNK, None]
        z = (x[None, :] - c) / bandwidth
        cdf = special.ndtr(z)
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        mass = np.diff(cdf, axis=1)
        first = c * mass - bandwidth * np.diff(pdf, axis=1)
        gap = np.diff(x)
        left = (x[None, 1:] * mass - first) / gap
        right = (first - x[None, :-1] * mass) / gap
        w[:-1] += left.sum(axis=0)
        w[1:] += right.sum(axis=0)
        w[0] += cdf[:, 0].sum()
        w[-1] += (1.0 - cdf[:, -1]).sum()
    w = np.clip(w, 0.0, None)
    return w / w.sum()


# ---------------------------------------------------------------------------
# synthetic generators


@dataclass(frozen=True)
class ModelParams:
    model: str = "gbm"
    spot: float = 1.0
    rate: float = 0.0
    vol: float = 0.2
    jump_intensity: float = 5.0
    jump_mean: float = -0.1
    jump_sd: float = 0.1
    kappa: float = 2.0
    theta: float = 0.04
    vol_of_vol: float = 0.3
    rho: float = -0.5
    v0: Optional[float] = None
    horizon: float = 1.0
    paths: int = DEFAULT_PATHS
    seed: int = 0
    max_dt: float = 1.0 / 252

    def __post_init__(self):
        if self.model not in ("gbm", "merton", "heston"):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.spot <= 0 or self.vol <= 0 or self.horizon <= 0:
            raise ValidationError("spot, vol and horizon must be positive")
        if self.v0 is not None and self.v0 <= 0:
            raise ValidationError("v0 must be positive")
        if abs(self.rho) > 1:
            raise ValidationError("|rho| must be <= 1")
        if self.paths < 2:
            raise ValidationError("need at least 2 paths")
        if self.model == "gbm" and not 0.15 <= self.vol <= 0.35:
            warnings.warn(f"vol {self.vol} outside the [0.15, 0.35] envelope", stacklevel=3)


def _chunk_rngs(seed, n_paths):
    n_chunks = -(-n_paths // _CHUNK)
    seqs = np.random.SeedSequence(seed).spawn(n_chunks)
    for i, ss in enumerate(seqs):
        yield min(_CHUNK, n_paths - i * _CHUNK), np.random.default_rng(ss)


def simulate_merton(params: ModelParams, times) -> np.ndarray:
    """Log-Euler jump-diffusion paths, shape ``(paths, len(times))``.

    The drift uses the exact compensator ``exp(mu_J + sd_J^2 / 2) - 1`` so
    the discounted price is a martingale.
    """
    p = params
    times = np.asarray(times, dtype=float)
    comp = np.exp(p.jump_mean + 0.5 * p.jump_sd**2) - 1.0
    out = []
    for n, rng in _chunk_rngs(p.seed, p.paths):
        logs = np.full(n, np.log(p.spot))
        cols = []
        prev = 0.0
        for t in times:
            dt = t - prev
            if dt > 0:
                z = rng.standard_normal(n)
                k = rng.poisson(p.jump_intensity * dt, n)
                jumps = k * p.jump_mean + np.sqrt(k) * p.jump_sd * rng.standard_normal(n)
                logs = logs + (p.rate - 0.5 * p.vol**2 - p.jump_intensity * comp) * dt
                logs = logs + p.vol * np.sqrt(dt) * z + jumps
            cols.append(np.exp(logs))
            prev = t
        out.append(np.stack(cols, axis=1))
    return np.concatenate(out, axis=0)


def simulate_heston(params: ModelParams, times) -> np.ndarray:
    """Quadratic-exponential (Andersen) Heston paths, shape ``(paths, len(times))``.

    With ``v0=None`` each path starts from the stationary Gamma law of the
    variance.
    """
    p = params
    times = np.asarray(times, dtype=float)
    kap, th, sv, rho = p.kappa, p.theta, p.vol_of_vol, p.rho
    g1 = g2 = 0.5
    out = []
    for n, rng in _chunk_rngs(p.seed, p.paths):
        if p.v0 is None:
            v = rng.gamma(2 * kap * th / sv**2, sv**2 / (2 * kap), n)
        else:
            v = np.full(n, float(p.v0))
        logs = np.full(n, np.log(p.spot))
        cols = []
        prev = 0.0
        for t in times:
            span = t - prev
            steps = int(np.ceil(span / p.max_dt)) if span > 0 else 0
            for _ in range(steps):
                dt = span / steps
                e = np.exp(-kap * dt)
                m = th + (v - th) * e
                s2 = v * sv**2 * e / kap * (1 - e) + th * sv**2 / (2 * kap) * (1 - e) ** 2
                psi = s2 / np.maximum(m * m, 1e-300)
                v_new = np.empty(n)
                quad = psi <= 1.5
                if quad.any():
                    inv = 2.0 / psi[quad]
                    b2 = inv - 1 + np.sqrt(inv) * np.sqrt(inv - 1)
                    a = m[quad] / (1 + b2)
                    v_new[quad] = a * (np.sqrt(b2) + rng.standard_normal(quad.sum())) ** 2
                expo = ~quad
                if expo.any():
                    pp = (psi[expo] - 1) / (psi[expo] + 1)
                    beta = (1 - pp) / m[expo]
                    u = rng.random(expo.sum())
                    v_new[expo] = np.where(u <= pp, 0.0, np.log((1 - pp) / np.maximum(1 - u, 1e-300)) / beta)
                K0 = -rho * kap * th * dt / sv
                K1 = g1 * dt * (kap * rho / sv - 0.5) - rho / sv
                K2 = g2 * dt * (kap * rho / sv - 0.5) + rho / sv
                K3 = g1 * dt * (1 - rho**2)
                K4 = g2 * dt * (1 - rho**2)
                z = rng.standard_normal(n)
                logs = logs + p.rate * dt + K0 + K1 * v + K2 * v_new + np.sqrt(np.maximum(K3 * v + K4 * v_new, 0)) * z
                v = v_new
            cols.append(np.exp(logs))
            prev = t
        out.append(np.stack(cols, axis=1))
    return np.concatenate(out, axis=0)


def generate(params: ModelParams, times, grid: Grid, tol: float = 1e-6,
             floor: float = 1e-12) -> MarginalSequence:
    """Synthetic marginal sequence in de-drifted units.

    GBM marginals are exact lognormal laws projected onto the grid; Merton
    and Heston marginals are Gaussian kernel-density estimates of simulated
    prices (bandwidth ``0.05 * std``). Every marginal is then tilted to mean
    ``spot`` and the sequence is checked for convex order at ``tol``.

    Points carrying less than ``floor`` times the largest weight are dropped
    from the support. Such far-tail points have almost unidentified dual
    potentials and only slow the solver down.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValidationError("times must be non-negative and strictly increasing")
    if times[-1] > params.horizon + 1e-12:
        raise ValidationError("last time exceeds the model horizon")
    S0 = params.spot
    rows = []
    if params.model == "gbm":
        for t in times:
            rows.append(_lognormal_on_grid(grid, S0, params.vol * np.sqrt(t)))
    else:
        sim = simulate_merton if params.model == "merton" else simulate_heston
        paths = sim(params, times) * np.exp(-params.rate * times)[None, :]
        for j, t in enumerate(times):
            s = paths[:, j]
            sd = s.std()
            if sd <= 0:
                rows.append(project_points([S0], [1.0], grid))
            else:
                rows.append(_kde_on_grid(grid, s, kde_bandwidth(s)))
    return centred_sequence(grid, rows, times, S0, tol, floor)


def centred_sequence(grid: Grid, rows, times, mean: float, tol: float = 1e-6,
                     floor: float = 1e-12) -> MarginalSequence:
    """Tilt each row to ``mean``, drop far-tail points, and check convex order."""
    tilted = []
    for w in rows:
        w = np.asarray(w, dtype=float)
        w = w / w.sum()
        if abs(w @ grid.points - mean) > 1e-14 * abs(mean):
            w = tilt_to_mean(w, grid.points, mean)
        if floor > 0:
            w = np.where(w < floor * w.max(), 0.0, w)
            w = w / w.sum()
            if abs(w @ grid.points - mean) > 1e-14 * abs(mean):
                w = tilt_to_mean(w, grid.points, mean)
        tilted.append(w)
    seq = MarginalSequence(grid, np.array(tilted), times)
    require_convex_order(seq, tol)
    return seq


def kde_bandwidth(samples) -> float:
    return 0.05 * float(np.std(samples))


# ---------------------------------------------------------------------------
# calibration from quotes


@dataclass(frozen=True)
class OptionQuote:
    strike: float
    maturity: float
    mid: float
    spread: float = 0.0

    def __post_init__(self):
        if self.mid < 0 or self.spread < 0:
            raise ValidationError("mid and spread must be non-negative")
        if self.mid - self.spread / 2 < -1e-15:
            raise ValidationError(f"bid below zero for quote at strike {self.strike}")


@dataclass(frozen=True)
class CalibrationConfig:
    tv_weight: float = 1e-4
    max_iters: int = 20_000
    step_tol: float = 1e-13
    tv_step: float = 1.0
    alpha: float = 0.05


@dataclass
class CalibrationResult:
    marginals: MarginalSequence
    deltas: np.ndarray
    residuals: list = field(default_factory=list)
    iterations: list = field(default_factory=list)


def calibration_delta(spread: float, n_quotes: int, alpha: float = 0.05) -> float:
    """Marginal estimation error from quote count and bid-ask spread."""
    if n_quotes < 1:
        raise ValidationError("need at least one quote")
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    return spread / 2 * np.sqrt(2 * (1 + np.log(2 / alpha)) / n_quotes)


def _simplex_shift(v):
    """Threshold ``a`` with ``sum(max(v - a, 0)) = 1``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return css[rho] / (rho + 1)


def project_simplex_mean(v, x, mean):
    """Euclidean projection onto ``{p >= 0, sum p = 1, sum p x = mean}``."""
    if not x[0] < mean < x[-1]:
        raise Infeasible(f"forward {mean} is outside the grid hull ({x[0]}, {x[-1]})")

    def proj(b):
        w = v - b * x
        return np.maximum(w - _simplex_shift(w), 0.0)

    def g(b):
        return proj(b) @ x - mean

    span = max(1.0, np.ptp(v)) / max(np.min(np.diff(x)), 1e-300)
    lo, hi = -span, span
    for _ in range(200):
        if g(lo) >= 0:
            break
        lo *= 4
    for _ in range(200):
        if g(hi) <= 0:
            break
        hi *= 4
    b = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return proj(b)


def _calibrate_one(strikes, prices, x, forward, cfg: CalibrationConfig):
    A = np.maximum(x[None, :] - strikes[:, None], 0.0)
    Lip = 2.0 * np.linalg.norm(A, 2) ** 2
    mu = project_simplex_mean(np.full(x.size, 1.0 / x.size), x, forward)
    y, t_acc, prev = mu.copy(), 1.0, mu.copy()
    lam = cfg.tv_weight
    for k in range(cfg.max_iters):
        grad = 2.0 * A.T @ (A @ y - prices)
        step = y - grad / Lip
        if lam > 0:
            d = np.sign(np.diff(y))
            sub = np.zeros_like(y)
            sub[:-1] -= d
            sub[1:] += d
            step -= lam * cfg.tv_step / (k + 1) * sub / Lip
        mu = project_simplex_mean(step, x, forward)
        change = np.max(np.abs(mu - prev))
        # with TV on, movement never drops below the vanishing subgradient
        # step, so that step size is the floor of the stopping test
        tv_floor = 4.0 * lam * cfg.tv_step / ((k + 1) * Lip)
        if change < max(cfg.step_tol, tv_floor):
            return mu, k + 1
        # FISTA momentum with restart when the objective would increase
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t_acc * t_acc))
        if np.sum((A @ mu - prices) ** 2) > np.sum((A @ prev - prices) ** 2):
            t_next, y = 1.0, mu.copy()
        else:
            y = mu + (t_acc - 1) / t_next * (mu - prev)
        prev, t_acc = mu, t_next
    raise NotConverged(f"calibration did not reach step_tol {cfg.step_tol} in {cfg.max_iters} iterations")


def calibrate(quotes: Sequence[OptionQuote], grid: Grid, forward: float,
              cfg: CalibrationConfig = CalibrationConfig()) -> CalibrationResult:
    """Fit one marginal per maturity to call quotes.

    Minimises squared repricing error plus ``tv_weight * TV(mu)`` over the
    probability simplex with the mean pinned to ``forward``. Returns the
    marginals and the per-maturity estimation error ``delta_t``.
    """
    if not quotes:
        raise Infeasible("empty quote list")
    x = grid.points
    mats = sorted({q.maturity for q in quotes})
    rows, deltas, resid, iters = [], [], [], []
    for T in mats:
        qs = sorted((q for q in quotes if q.maturity == T), key=lambda q: q.strike)
        strikes = np.array([q.strike for q in qs])
        if strikes.size < 2:
            raise Infeasible(f"maturity {T}: need at least 2 strikes")
        if strikes[0] < x[0] or strikes[-1] > x[-1]:
            raise Infeasible(f"maturity {T}: grid does not span all strikes")
        prices = np.array([q.mid for q in qs])
        mu, k = _calibrate_one(strikes, prices, x, forward, cfg)
        rows.append(mu)
        iters.append(k)
        resid.append(float(np.max(np.abs(np.maximum(x[None, :] - strikes[:, None], 0) @ mu - prices))))
        spread = float(np.mean([q.spread for q in qs]))
        deltas.append(calibration_delta(spread, strikes.size, cfg.alpha))
    seq = MarginalSequence(grid, np.array(rows), np.array(mats))
    return CalibrationResult(seq, np.array(deltas), resid, iters)


def read_quotes(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"maturity", "strike", "mid", "spread"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            try:
                out.append(OptionQuote(float(row["strike"]), float(row["maturity"]),
                                       float(row["mid"]), float(row["spread"])))
            except ValueError as exc:
                raise ValidationError(f"{path}:{i}: {exc}") from exc
    return out


def write_quotes(path, quotes):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["maturity", "strike", "mid", "spread"])
        for q in quotes:
            w.writerow([repr(q.maturity), repr(q.strike), repr(q.mid), repr(q.spread)])
