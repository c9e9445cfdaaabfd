"""scikit-learn style wrappers around the functional API.

The inputs here are marginal sequences and option quotes rather than
feature matrices, so these classes follow the estimator conventions
(constructor stores parameters, ``fit`` returns ``self``, fitted state ends
in ``_``) without claiming to work inside sklearn pipelines.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ValidationError
from .grid import Grid, SparseGridConfig, make_sparse
from .marginals import CalibrationConfig, MarginalSequence, OptionQuote, calibrate, project_marginals
from .pricing import PayoffSpec, price_bounds
from .reference import build_reference
from .solver import CostSpec, SolverConfig, solve


def _sequence(X, grid=None, times=None) -> MarginalSequence:
    if isinstance(X, MarginalSequence):
        return X
    if grid is None:
        raise ValidationError("pass a MarginalSequence, or weights together with grid=")
    g = grid if isinstance(grid, Grid) else Grid(np.asarray(grid, dtype=float))
    return MarginalSequence(g, np.asarray(X, dtype=float), times)


def _cost(name, grid, n_steps):
    if name == "abs":
        return CostSpec.pairwise_abs(grid, n_steps)
    if name == "square":
        return CostSpec.pairwise_square(grid, n_steps)
    if name == "zero":
        return CostSpec.zero(grid, n_steps)
    raise ValidationError(f"unknown cost {name!r}")


class MartingaleSinkhorn(BaseEstimator):
    """Entropic martingale transport between the marginals passed to ``fit``."""

    def __init__(self, epsilon=0.5, tol=1e-9, max_iters=5000, cost="abs", sigma_ref=0.2, anderson=6):
        self.epsilon = epsilon
        self.tol = tol
        self.max_iters = max_iters
        self.cost = cost
        self.sigma_ref = sigma_ref
        self.anderson = anderson

    def fit(self, X, y=None, grid=None, times=None):
        seq = _sequence(X, grid, times)
        ref = build_reference(seq.grid, seq.times, sigma=self.sigma_ref)
        cfg = SolverConfig(epsilon=self.epsilon, tol=self.tol, max_iters=self.max_iters, anderson=self.anderson)
        self.potentials_, self.plan_, self.report_ = solve(seq, ref, _cost(self.cost, seq.grid, seq.n_steps), cfg)
        self.marginals_ = seq
        return self

    def transform(self, X=None):
        """Scaled potentials stacked as ``[u_0..u_N, h_0..h_{N-1}]`` rows."""
        return np.vstack([self.potentials_.u, self.potentials_.h])

    def predict(self, X):
        """Log-likelihood under the plan of each path of grid indices, shape ``(n, N+1)``."""
        idx = np.asarray(X, dtype=int)
        with np.errstate(divide="ignore"):
            ll = np.log(self.plan_.init[idx[:, 0]])
            for t, K in enumerate(self.plan_.kernels):
                ll = ll + np.log(K[idx[:, t], idx[:, t + 1]])
        return ll

    def score(self, X, y=None):
        return float(np.mean(self.predict(X)))

    def sample(self, n_paths, random_state=None):
        idx, _ = self.plan_.sample(n_paths, random_state)
        return idx


class BoundPricer(BaseEstimator):
    """Lower and upper price of ``payoff`` over martingale couplings of the marginals."""

    def __init__(self, payoff="forward_start", strike=1.0, epsilon=0.5, tol=1e-9, sigma_ref=0.2):
        self.payoff = payoff
        self.strike = strike
        self.epsilon = epsilon
        self.tol = tol
        self.sigma_ref = sigma_ref

    def _spec(self):
        if self.payoff in ("asian_call", "forward_start", "vanilla_call"):
            return getattr(PayoffSpec, self.payoff)(self.strike)
        if self.payoff in ("linear", "spread_abs"):
            return getattr(PayoffSpec, self.payoff)()
        raise ValidationError(f"unknown payoff {self.payoff!r}")

    def fit(self, X, y=None, grid=None, times=None):
        seq = _sequence(X, grid, times)
        ref = build_reference(seq.grid, seq.times, sigma=self.sigma_ref)
        res = price_bounds(seq, ref, self._spec(), SolverConfig(epsilon=self.epsilon, tol=self.tol))
        self.lower_, self.upper_ = res.lower, res.upper
        self.reports_ = res.reports
        return self

    def predict(self, X=None):
        return np.array([self.lower_, self.upper_])


class MarginalCalibrator(BaseEstimator):
    """Fit one marginal per maturity to call quotes."""

    def __init__(self, grid=None, forward=1.0, tv_weight=1e-4, alpha=0.05):
        self.grid = grid
        self.forward = forward
        self.tv_weight = tv_weight
        self.alpha = alpha

    def fit(self, X, y=None):
        """``X``: a list of :class:`OptionQuote` or rows ``(maturity, strike, mid, spread)``."""
        quotes = [q if isinstance(q, OptionQuote) else OptionQuote(float(q[1]), float(q[0]), float(q[2]), float(q[3]))
                  for q in X]
        g = self.grid if isinstance(self.grid, Grid) else Grid(np.asarray(self.grid, dtype=float))
        res = calibrate(quotes, g, self.forward, CalibrationConfig(tv_weight=self.tv_weight, alpha=self.alpha))
        self.marginals_ = res.marginals
        self.deltas_ = res.deltas
        self.residuals_ = np.array(res.residuals)
        return self

    def transform(self, X=None):
        return self.marginals_.weights

    def predict(self, X):
        """Model call prices for rows ``(maturity, strike)`` at calibrated maturities."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        times = self.marginals_.times
        out = np.empty(X.shape[0])
        for i, (T, K) in enumerate(X):
            j = np.flatnonzero(np.isclose(times, T))
            if j.size == 0:
                raise ValidationError(f"maturity {T} was not calibrated")
            out[i] = self.marginals_[int(j[0])].call_prices([K])[0]
        return out


class SparseGridBuilder(BaseEstimator):
    """Adaptive grid from marginal mass; ``transform`` re-expresses marginals on it."""

    def __init__(self, threshold=0.01, max_depth=8):
        self.threshold = threshold
        self.max_depth = max_depth

    def fit(self, X, y=None):
        self.grid_ = make_sparse(X, SparseGridConfig(self.threshold, self.max_depth))
        return self

    def transform(self, X):
        return project_marginals(X, self.grid_, mean=float(X.means()[0]))
