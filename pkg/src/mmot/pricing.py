"""Model-free price bounds for path-dependent payoffs.

Payoffs that depend on more than consecutive pairs of dates are handled by
augmenting the chain state: the Asian call carries a bucketed running
average, ``|X_N - X_0|`` carries the starting point and tabulated payoffs
carry the full path history.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import UnsupportedPayoff, ValidationError
from .grid import Grid
from .marginals import MarginalSequence
from .reference import ReferenceChain
from .solver import (
    ChainParts,
    DualPotentials,
    SolveReport,
    SolverConfig,
    TransportPlan,
    chain_expectation,
    solve_chain,
)

ASIAN_BUCKETS = 40
MAX_CUSTOM_STEPS = 3
MAX_STATES = 2_000_000


def _relabel(codes):
    """Compact integer codes to ``0..S-1``; returns ``(uniq, inverse)``."""
    uniq, inv = np.unique(codes, return_inverse=True)
    return uniq, inv.reshape(codes.shape)


@dataclass(frozen=True)
class PayoffSpec:
    """A payoff on the path ``(X_0, ..., X_N)``.

    kinds: ``asian_call`` (average of ``X_1..X_N`` minus ``strike``, positive
    part), ``forward_start`` (``(X_N - strike X_{N-1})^+``), ``vanilla_call``
    (``(X_t - strike)^+`` at ``t_index``, default ``N``), ``linear`` (``X_N``),
    ``constant`` (``strike``), ``spread_abs`` (``|X_N - X_0|``) and ``custom``
    (a table over full paths, ``N <= 3``).
    """

    kind: str
    strike: float = 0.0
    t_index: Optional[int] = None
    table: Optional[np.ndarray] = None
    buckets: int = ASIAN_BUCKETS
    scale: float = 1.0

    KINDS = ("asian_call", "forward_start", "vanilla_call", "linear", "constant", "spread_abs", "custom")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise UnsupportedPayoff(f"unknown payoff kind {self.kind!r}")
        if self.kind == "custom" and self.table is None:
            raise ValidationError("custom payoff needs a table")
        if self.buckets < 2:
            raise ValidationError("need at least two average buckets")

    # constructors -----------------------------------------------------------
    @classmethod
    def asian_call(cls, strike, buckets=ASIAN_BUCKETS):
        return cls("asian_call", float(strike), buckets=buckets)

    @classmethod
    def forward_start(cls, strike):
        return cls("forward_start", float(strike))

    @classmethod
    def vanilla_call(cls, strike, t_index=None):
        return cls("vanilla_call", float(strike), t_index)

    @classmethod
    def linear(cls):
        return cls("linear")

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", float(value))

    @classmethod
    def spread_abs(cls):
        return cls("spread_abs")

    @classmethod
    def custom(cls, table):
        return cls("custom", table=np.asarray(table, dtype=float))

    def scaled(self, factor) -> "PayoffSpec":
        return replace(self, scale=self.scale * float(factor))

    # metadata -----------------------------------------------------------------
    def lipschitz(self, grid: Optional[Grid] = None) -> float:
        s = abs(self.scale)
        if self.kind == "forward_start":
            return s * max(1.0, abs(self.strike))
        if self.kind == "constant":
            return 0.0
        if self.kind == "custom":
            if grid is None:
                raise ValidationError("custom payoff lipschitz needs the grid")
            T = self.table
            dx = np.diff(grid.points)
            L = 0.0
            for ax in range(T.ndim):
                shape = [1] * T.ndim
                shape[ax] = dx.size
                L = max(L, float(np.max(np.abs(np.diff(T, axis=ax)) / dx.reshape(shape))))
            return s * L
        return s

    def evaluate(self, paths) -> np.ndarray:
        """Payoff on an ``(n, N+1)`` array of path values (not indices)."""
        P = np.asarray(paths, dtype=float)
        N = P.shape[1] - 1
        k = self.kind
        if k == "asian_call":
            out = np.maximum(P[:, 1:].mean(axis=1) - self.strike, 0.0)
        elif k == "forward_start":
            out = np.maximum(P[:, -1] - self.strike * P[:, -2], 0.0)
        elif k == "vanilla_call":
            t = N if self.t_index is None else self.t_index
            out = np.maximum(P[:, t] - self.strike, 0.0)
        elif k == "linear":
            out = P[:, -1].copy()
        elif k == "constant":
            out = np.full(P.shape[0], self.strike)
        elif k == "spread_abs":
            out = np.abs(P[:, -1] - P[:, 0])
        else:
            raise UnsupportedPayoff("custom payoffs are tabulated on grid indices; use evaluate_indices")
        return self.scale * out

    def evaluate_indices(self, idx, grid: Grid) -> np.ndarray:
        idx = np.asarray(idx)
        if self.kind == "custom":
            return self.scale * self.table[tuple(idx.T)]
        return self.evaluate(grid.points[idx])

    # chain representation -----------------------------------------------------
    def chain_parts(self, grid: Grid, n_steps: int) -> ChainParts:
        """Express the payoff as a cost on a (possibly augmented) chain."""
        x = grid.points
        M = x.size
        N = int(n_steps)
        if N < 1:
            raise ValidationError("need at least one step")
        s = self.scale
        zeros = np.zeros((M, M))
        k = self.kind
        if k in ("vanilla_call", "linear", "constant"):
            if k == "vanilla_call":
                t = N if self.t_index is None else int(self.t_index)
                if not 0 <= t <= N:
                    raise ValidationError(f"t_index {t} outside 0..{N}")
                f = s * np.maximum(x - self.strike, 0.0)
            elif k == "linear":
                t, f = N, s * x
            else:
                t, f = N, np.full(M, s * self.strike)
            pair = [zeros] * N
            if t == N:
                return ChainParts(pair, unary=f)
            if t == 0:
                pair[0] = np.repeat(f[:, None], M, axis=1)
            else:
                pair[t - 1] = np.repeat(f[None, :], M, axis=0)
            return ChainParts(pair)
        if k == "forward_start":
            pair = [zeros] * N
            pair[N - 1] = s * np.maximum(x[None, :] - self.strike * x[:, None], 0.0)
            return ChainParts(pair)
        if k == "spread_abs":
            return _start_augmented(x, N, lambda xt, x0: s * np.abs(xt - x0))
        if k == "asian_call":
            return _asian_augmented(x, N, self.strike, self.buckets, s)
        if N > MAX_CUSTOM_STEPS:
            raise UnsupportedPayoff(f"tabulated payoffs are limited to N <= {MAX_CUSTOM_STEPS}")
        if self.table.shape != (M,) * (N + 1):
            raise ValidationError(f"custom table must have shape {(M,) * (N + 1)}")
        return _history_augmented(M, N, s * self.table)


def _start_augmented(x, N, final):
    """States ``(x_t, i_0)``; the final cost depends on the start point."""
    M = x.size
    sg = [np.arange(M)]
    start = [np.arange(M)]
    nxt = []
    for t in range(N):
        codes = np.arange(M)[None, :] * M + start[t][:, None]
        uniq, inv = _relabel(codes)
        nxt.append(inv)
        sg.append(uniq // M)
        start.append(uniq % M)
    pair = [np.zeros((g.size, M)) for g in sg[:-1]]
    return ChainParts(pair, final(x[sg[-1]], x[start[-1]]), sg, nxt)


def _asian_augmented(x, N, strike, buckets, scale):
    """States ``(x_t, b_t)`` with ``b_t`` the nearest bucket of the running mean of ``X_1..X_t``."""
    M = x.size
    centres = np.linspace(x[0], x[-1], buckets)
    width = centres[1] - centres[0]

    def bucket(a):
        return np.clip(np.rint((a - centres[0]) / width), 0, buckets - 1).astype(np.int64)

    sg = [np.arange(M)]
    avg = [None]
    nxt = []
    for t in range(N):
        if t == 0:
            b = np.broadcast_to(bucket(x)[None, :], (M, M))
        else:
            a = (t * centres[avg[t]][:, None] + x[None, :]) / (t + 1)
            b = bucket(a)
        codes = np.arange(M)[None, :] * buckets + b
        uniq, inv = _relabel(codes)
        if uniq.size > MAX_STATES:
            raise UnsupportedPayoff("augmented state space too large")
        nxt.append(inv)
        sg.append(uniq // buckets)
        avg.append(uniq % buckets)
    pair = [np.zeros((g.size, M)) for g in sg[:-1]]
    unary = scale * np.maximum(centres[avg[-1]] - strike, 0.0)
    return ChainParts(pair, unary, sg, nxt)


def _history_augmented(M, N, table):
    """States are full path prefixes ``(x_0..x_t)`` encoded base ``M``."""
    sg = [np.arange(M)]
    nxt = []
    for t in range(N):
        S = M ** (t + 1)
        nxt.append(np.arange(S)[:, None] * M + np.arange(M)[None, :])
        sg.append(np.tile(np.arange(M), S))
    pair = [np.zeros((M ** (t + 1), M)) for t in range(N)]
    return ChainParts(pair, table.reshape(-1), sg, nxt)


# ---------------------------------------------------------------------------
# bounds


@dataclass
class BoundSolve:
    lower: float
    upper: float
    plans: tuple
    reports: tuple
    potentials: tuple

    def __iter__(self):
        return iter((self.lower, self.upper, self.plans))


def price_bounds(marginals: MarginalSequence, ref: ReferenceChain, payoff: PayoffSpec,
                 cfg: SolverConfig = SolverConfig()) -> BoundSolve:
    """Lower bound from minimising ``E[phi]``, upper bound from minimising ``E[-phi]``.

    Both values are plain expectations of the payoff under the respective
    entropic optimal plans.
    """
    parts = payoff.chain_parts(marginals.grid, marginals.n_steps)
    lo_pot, lo_plan, lo_rep = solve_chain(marginals, ref, parts, cfg)
    hi_pot, hi_plan, hi_rep = solve_chain(marginals, ref, parts.negated(), replace(cfg, check_convex_order=False))
    lower = chain_expectation(lo_plan, parts)
    upper = chain_expectation(hi_plan, parts)
    return BoundSolve(lower, upper, (lo_plan, hi_plan), (lo_rep, hi_rep), (lo_pot, hi_pot))


@dataclass(frozen=True)
class TransactionCostSpec:
    rates: tuple

    def __post_init__(self):
        r = tuple(float(k) for k in self.rates)
        if any(k < 0 or not np.isfinite(k) for k in r):
            raise ValidationError("transaction cost rates must be finite and >= 0")
        object.__setattr__(self, "rates", r)

    @classmethod
    def flat(cls, rate, n_steps):
        return cls((float(rate),) * int(n_steps))


@dataclass(frozen=True)
class PriceBounds:
    """Bounds plus the two widening terms.

    ``gamma`` widens each side in full. ``delta`` is the width of the
    calibration band, split evenly between the two sides.
    """

    lower: float
    upper: float
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValidationError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.gamma < 0 or self.delta < 0:
            raise ValidationError("widening terms must be >= 0")

    @property
    def widened(self):
        pad = self.gamma + 0.5 * self.delta
        return (self.lower - pad, self.upper + pad)

    @property
    def mid(self):
        lo, hi = self.widened
        return 0.5 * (lo + hi)

    def to_json(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "gamma": self.gamma, "delta": self.delta,
                "widened": list(self.widened), "mid": self.mid}


def turnover(plan: TransportPlan) -> np.ndarray:
    """``E_P|X_{t+1} - X_t|`` per step."""
    return plan.expected_abs_increments()


def widen_transaction(bounds: PriceBounds, plan: Optional[TransportPlan], tc: TransactionCostSpec,
                      increments=None) -> PriceBounds:
    inc = turnover(plan) if increments is None else np.asarray(increments, dtype=float)
    if len(tc.rates) != inc.size:
        raise ValidationError(f"need {inc.size} transaction cost rates, got {len(tc.rates)}")
    gamma = float(np.dot(tc.rates, inc))
    return replace(bounds, gamma=bounds.gamma + gamma)


def calibration_constant(lipschitz_cost, epsilon, diameter) -> float:
    return (lipschitz_cost + epsilon * diameter) / epsilon


def widen_calibration(bounds: PriceBounds, deltas, lipschitz_cost, epsilon, diameter,
                      lipschitz_payoff=1.0) -> PriceBounds:
    d = np.asarray(deltas, dtype=float)
    if np.any(d < 0):
        raise ValidationError("calibration radii must be >= 0")
    width = 0.0 if d.size == 0 else lipschitz_payoff * calibration_constant(lipschitz_cost, epsilon, diameter) * float(d.max())
    return replace(bounds, delta=bounds.delta + width)


def widen(bounds: PriceBounds, gamma=0.0, delta=0.0) -> PriceBounds:
    return replace(bounds, gamma=bounds.gamma + float(gamma), delta=bounds.delta + float(delta))
