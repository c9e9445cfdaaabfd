"""Delta hedging under a solved transport plan."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import UnsupportedPayoff, ValidationError
from .pricing import PayoffSpec
from .solver import MASS_FLOOR, TransportPlan


@dataclass
class HedgePolicy:
    values: np.ndarray  # (N+1, M) continuation values
    deltas: np.ndarray  # (N, M)
    delta_lipschitz: float
    support: np.ndarray  # (N+1, M) rows visited with mass >= MASS_FLOOR

    @property
    def price(self):
        return self.values[0]


def _fd_rows(A, x):
    """Slope of ``k -> A[i, k]`` at ``k = i`` for every row ``i``."""
    M = x.size
    i = np.arange(M)
    lo = np.maximum(i - 1, 0)
    hi = np.minimum(i + 1, M - 1)
    return (A[i, hi] - A[i, lo]) / (x[hi] - x[lo])


def build_policy(plan: TransportPlan, payoff: PayoffSpec) -> HedgePolicy:
    """Backward induction for continuation values and finite-difference deltas."""
    if not plan.markov:
        raise UnsupportedPayoff("hedging needs a Markov plan on the grid")
    parts = payoff.chain_parts(plan.grid, plan.n_steps)
    if not parts.plain:
        raise UnsupportedPayoff(f"{payoff.kind} needs an augmented plan; hedging supports pairwise payoffs")
    x = plan.grid.points
    N = plan.n_steps
    M = x.size
    V = np.zeros((N + 1, M))
    if parts.unary is not None:
        V[N] = parts.unary
    D = np.zeros((N, M))
    for t in range(N - 1, -1, -1):
        P = plan.kernels[t]
        W = parts.pair[t] + V[t + 1][None, :]  # value after the step, given (x_t, x_{t+1})
        V[t] = (P * W).sum(axis=1)
        # A[i, k] = E[W(x_i, Y) | X_t = x_k]; the delta moves only the conditioning point
        A = W @ P.T
        D[t] = _fd_rows(A, x)
    marg = plan.marginals()
    support = marg >= MASS_FLOOR
    L = 0.0
    for t in range(N):
        s = support[t]
        both = s[1:] & s[:-1]
        if both.any():
            L = max(L, float(np.max(np.abs(np.diff(D[t]) / np.diff(x))[both])))
    return HedgePolicy(V, D, L, support)


@dataclass
class HedgeReport:
    rmse: float
    unhedged_rmse: float
    bound: float
    frac_within: float
    price: float
    errors: np.ndarray

    def to_json(self) -> dict:
        return {"rmse": self.rmse, "unhedged_rmse": self.unhedged_rmse, "bound": self.bound,
                "frac_within": self.frac_within, "price": self.price, "n_paths": int(self.errors.size)}


def bound_proxy(delta_lipschitz, dt, constant=1.0) -> float:
    """``L_delta * C * sqrt(dt) * log(1/dt)``."""
    if not 0 < dt < 1:
        raise ValidationError("dt must lie in (0, 1)")
    return float(delta_lipschitz * constant * np.sqrt(dt) * np.log(1.0 / dt))


def simulate_hedge(plan: TransportPlan, policy: HedgePolicy, payoff: PayoffSpec, n_paths: int, seed,
                   dt=None, constant=1.0) -> HedgeReport:
    """Sample paths from the plan and track the self-financing delta hedge.

    The terminal error of a path is ``payoff - V_0(X_0) - sum_t delta_t(X_t) dX_t``.
    """
    if n_paths < 1:
        raise ValidationError("n_paths must be >= 1")
    x = plan.grid.points
    idx, _ = plan.sample(n_paths, seed)
    X = x[idx]
    phi = payoff.evaluate_indices(idx, plan.grid)
    v0 = policy.values[0][idx[:, 0]]
    gains = np.zeros(n_paths)
    for t in range(plan.n_steps):
        gains += policy.deltas[t][idx[:, t]] * (X[:, t + 1] - X[:, t])
    err = phi - v0 - gains
    unhedged = phi - v0
    dt = 1.0 / plan.n_steps if dt is None else float(dt)
    b = bound_proxy(policy.delta_lipschitz, dt, constant)
    price = float(plan.init @ policy.values[0])
    return HedgeReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        unhedged_rmse=float(np.sqrt(np.mean(unhedged**2))),
        bound=b,
        frac_within=float(np.mean(np.abs(err) <= b)),
        price=price,
        errors=err,
    )


def write_errors(path, errors):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path_id", "terminal_error"])
        for i, e in enumerate(errors):
            w.writerow([i, repr(float(e))])
