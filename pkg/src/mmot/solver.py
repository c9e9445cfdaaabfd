"""Entropic multi-period martingale optimal transport.

The solver alternates two exact block updates on the dual potentials:

* u-step: for ``t = 0..N`` rescale so the Gibbs marginal at ``t`` equals
  ``mu_t`` (closed form, chain message passing in log domain);
* h-step: for ``t = N-1..0`` tilt each transition row so its conditional
  mean equals the starting point (scalar safeguarded Newton per row).

Running the h-sweep backwards leaves every conditional drift at zero at the
end of the sweep for Markov chains, since a row only depends on later
slices. Potentials are gauge-fixed after each sweep so convergence can be
measured in the sup norm.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._chain import ChainModel, lse
from ._tilt import solve_tilts
from .exceptions import (
    GridMismatch,
    MaxItersExceeded,
    NumericalOverflow,
    RowInfeasible,
    ValidationError,
)
from .grid import Grid
from .marginals import Marginal, MarginalSequence, require_convex_order
from .reference import ReferenceChain

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-10
TILT_BOUND = 200.0
MAX_ANDERSON_REJECTS = 20


# ---------------------------------------------------------------------------
# configuration and containers


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 0.5
    tol: float = 1e-9
    drift_tol: float = 1e-6
    max_iters: int = 5000
    h_newton_tol: float = 1e-13
    h_newton_max: int = 100
    convex_tol: float = 1e-8
    check_convex_order: bool = True
    raise_on_max_iters: bool = True
    record_history: bool = True
    anderson: int = 6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not self.drift_tol > 0:
            raise ValidationError("drift_tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.anderson < 0:
            raise ValidationError("anderson memory must be >= 0")


class CostSpec:
    """Pairwise cost ``c_t(x_t, x_{t+1})``, one ``M x M`` table per step."""

    def __init__(self, tables, kind="custom", lipschitz=None, grid=None):
        self.tables = [np.asarray(T, dtype=float) for T in tables]
        if not self.tables:
            raise ValidationError("need at least one cost table")
        M = self.tables[0].shape[0]
        for T in self.tables:
            if T.shape != (M, M):
                raise ValidationError(f"cost tables must be {M}x{M}")
            if not np.all(np.isfinite(T)):
                raise ValidationError("cost tables must be finite")
        self.kind = kind
        self.grid = grid
        self._lipschitz = lipschitz

    @property
    def n_steps(self):
        return len(self.tables)

    @property
    def lipschitz(self) -> float:
        if self._lipschitz is None:
            if self.grid is None:
                raise ValidationError("lipschitz constant unknown without a grid")
            self._lipschitz = estimate_lipschitz(self.tables, self.grid.points)
        return self._lipschitz

    @classmethod
    def _from_fn(cls, grid, n_steps, fn, kind, lipschitz=None):
        x = grid.points
        T = fn(x[:, None], x[None, :])
        return cls([T] * n_steps, kind, lipschitz, grid)

    @classmethod
    def zero(cls, grid, n_steps):
        return cls._from_fn(grid, n_steps, lambda a, b: np.zeros(np.broadcast(a, b).shape), "zero", 0.0)

    @classmethod
    def pairwise_abs(cls, grid, n_steps, scale=1.0):
        return cls._from_fn(grid, n_steps, lambda a, b: scale * np.abs(b - a), "pairwise_abs", abs(scale))

    @classmethod
    def pairwise_square(cls, grid, n_steps, scale=1.0):
        return cls._from_fn(grid, n_steps, lambda a, b: scale * (b - a) ** 2, "pairwise_square",
                            2 * abs(scale) * grid.diameter())

    @classmethod
    def forward_start_call(cls, grid, n_steps, strike):
        return cls._from_fn(grid, n_steps, lambda a, b: np.maximum(b - strike * a, 0.0),
                            "forward_start_call", max(1.0, abs(strike)))

    def negated(self) -> "CostSpec":
        return CostSpec([-T for T in self.tables], f"-{self.kind}", self._lipschitz, self.grid)

    def check_lipschitz(self, n_samples=100, seed=0, rtol=1e-9) -> bool:
        """Sample random triples and test both arguments against ``lipschitz``."""
        rng = np.random.default_rng(seed)
        x = self.grid.points
        L = self.lipschitz
        M = x.size
        for _ in range(n_samples):
            t = rng.integers(self.n_steps)
            i, j, k = rng.integers(M, size=3)
            T = self.tables[t]
            if abs(T[i, k] - T[j, k]) > L * abs(x[i] - x[j]) * (1 + rtol) + 1e-12:
                return False
            if abs(T[k, i] - T[k, j]) > L * abs(x[i] - x[j]) * (1 + rtol) + 1e-12:
                return False
        return True


def estimate_lipschitz(tables, x) -> float:
    dx = np.diff(x)
    L = 0.0
    for T in tables:
        L = max(L, np.max(np.abs(np.diff(T, axis=0)) / dx[:, None]))
        L = max(L, np.max(np.abs(np.diff(T, axis=1)) / dx[None, :]))
    return float(L)


@dataclass
class DualPotentials:
    """Marginal potentials ``u`` (N+1 rows) and martingale potentials ``h`` (N rows).

    Row ``t`` of ``h`` multiplies the increment from ``t`` to ``t + 1`` and is
    indexed by the grid point at ``t``. Entries where the marginal has no
    mass are ``-inf`` in ``u``.
    """

    u: np.ndarray
    h: np.ndarray
    epsilon: float

    @property
    def n_steps(self):
        return self.h.shape[0]

    def gauge_fixed(self, weights) -> "DualPotentials":
        u = self.u.copy()
        for t in range(1, u.shape[0]):
            fin = np.isfinite(u[t])
            a = float(weights[t][fin] @ u[t][fin])
            u[t][fin] -= a
            u[0][np.isfinite(u[0])] += a
        return DualPotentials(u, self.h.copy(), self.epsilon)

    def to_json(self) -> dict:
        enc = lambda a: [[None if not np.isfinite(v) else float(v) for v in row] for row in a]
        return {"u": enc(self.u), "h": enc(self.h), "epsilon": self.epsilon}

    @classmethod
    def from_json(cls, obj) -> "DualPotentials":
        dec = lambda rows: np.array([[-np.inf if v is None else v for v in r] for r in rows], dtype=float)
        try:
            h = dec(obj["h"]) if obj["h"] else np.zeros((0, len(obj["u"][0])))
            return cls(dec(obj["u"]), h, float(obj["epsilon"]))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise ValidationError(f"malformed solution file: {exc}") from exc


@dataclass
class SolveReport:
    iters: int = 0
    converged: bool = False
    final_sup_change: float = float("inf")
    max_drift: float = float("nan")
    marginal_defect: float = float("nan")
    dual_value: float = float("nan")
    primal_value: float = float("nan")
    duality_gap: float = float("nan")
    per_iter_error: list = field(default_factory=list)
    change_history: list = field(default_factory=list)
    flagged_rows: int = 0
    wall_time: float = 0.0
    frozen_iters: int = 0
    refine_iters: int = 0
    frozen_time: float = 0.0
    refine_time: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


class TransportPlan:
    """Initial law plus transition kernels of the optimal (Markov) plan.

    For augmented chains ``init`` and kernel rows live on augmented states;
    ``state_grid[t]`` maps states to grid indices and ``next_state[t][s, y]``
    gives the state reached from ``s`` by moving to grid point ``y``.
    """

    def __init__(self, grid: Grid, init, kernels, state_grid=None, next_state=None):
        self.grid = grid
        self.init = np.asarray(init, dtype=float)
        self.kernels = [np.asarray(K, dtype=float) for K in kernels]
        self.markov = next_state is None
        M = grid.size
        if self.markov:
            self.state_grid = [np.arange(M)] * (len(self.kernels) + 1)
            self.next_state = None
        else:
            self.state_grid = list(state_grid)
            self.next_state = list(next_state)

    @property
    def n_steps(self):
        return len(self.kernels)

    def _push(self, p, t):
        q = p[:, None] * self.kernels[t]
        if self.markov:
            return q.sum(axis=0)
        return np.bincount(self.next_state[t].ravel(), weights=q.ravel(),
                           minlength=self.state_grid[t + 1].size)

    def state_marginals(self):
        out = [self.init]
        for t in range(self.n_steps):
            out.append(self._push(out[-1], t))
        return out

    def marginals(self) -> np.ndarray:
        M = self.grid.size
        return np.array([np.bincount(g, weights=p, minlength=M)
                         for g, p in zip(self.state_grid, self.state_marginals())])

    def conditional_drift(self):
        """Per step: ``(mass(x), E[X_{t+1} - X_t | X_t = x])`` on the grid."""
        x = self.grid.points
        M = x.size
        out = []
        for t, p in enumerate(self.state_marginals()[:-1]):
            g = self.state_grid[t]
            d = self.kernels[t] @ x - x[g]
            mass = np.bincount(g, weights=p, minlength=M)
            num = np.bincount(g, weights=p * d, minlength=M)
            with np.errstate(invalid="ignore", divide="ignore"):
                out.append((mass, np.where(mass > 0, num / mass, 0.0)))
        return out

    def max_drift(self, mass_floor=MASS_FLOOR) -> float:
        worst = 0.0
        for mass, drift in self.conditional_drift():
            sel = mass >= mass_floor
            if sel.any():
                worst = max(worst, float(np.max(np.abs(drift[sel]))))
        return worst

    def pairwise_expectation(self, tables) -> float:
        """``sum_t E[c_t(X_t, X_{t+1})]`` for grid-level tables."""
        total = 0.0
        for t, p in enumerate(self.state_marginals()[:-1]):
            T = tables[t][self.state_grid[t]]
            total += float(p @ (self.kernels[t] * T).sum(axis=1))
        return total

    def expected_abs_increments(self) -> np.ndarray:
        x = self.grid.points
        A = np.abs(x[None, :] - x[:, None])
        zero = np.zeros_like(A)
        return np.array([self.pairwise_expectation([A if s == t else zero for s in range(self.n_steps)])
                         for t in range(self.n_steps)])

    def sample(self, n_paths, rng):
        """Draw paths; returns ``(grid_paths, state_paths)`` of shape ``(n, N+1)``."""
        rng = np.random.default_rng(rng)
        N = self.n_steps
        states = np.empty((n_paths, N + 1), dtype=int)
        states[:, 0] = _draw(self.init[None, :].repeat(n_paths, 0), rng)
        grid_idx = np.empty_like(states)
        grid_idx[:, 0] = self.state_grid[0][states[:, 0]]
        for t in range(N):
            y = _draw(self.kernels[t][states[:, t]], rng)
            grid_idx[:, t + 1] = y
            states[:, t + 1] = y if self.markov else self.next_state[t][states[:, t], y]
        return grid_idx, states

    def path_distance(self, other: "TransportPlan", weights=None) -> float:
        """Initial-law W1 plus the ``mu``-weighted sum of per-row kernel W1 distances."""
        if not (self.markov and other.markov):
            raise ValidationError("path distance is defined for Markov plans only")
        if self.grid != other.grid:
            raise GridMismatch("plans live on different grids")
        x = self.grid.points
        dx = np.diff(x)
        margs = self.state_marginals() if weights is None else list(weights)
        total = float(np.abs(np.cumsum(self.init - other.init)[:-1]) @ dx)
        for t in range(self.n_steps):
            diff = np.abs(np.cumsum(self.kernels[t] - other.kernels[t], axis=1)[:, :-1]) @ dx
            total += float(margs[t] @ diff)
        return total

    def to_json(self) -> dict:
        if not self.markov:
            raise ValidationError("only Markov plans serialise")
        return {"grid": self.grid.points.tolist(), "init": self.init.tolist(),
                "kernels": [K.tolist() for K in self.kernels]}


def _draw(P, rng):
    c = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0]) * c[:, -1]
    return np.minimum((c < u[:, None]).sum(axis=1), P.shape[1] - 1)


def wasserstein1(a: Marginal, b: Marginal) -> float:
    """1-D W1 distance via the CDF formula on a shared grid."""
    if a.grid != b.grid:
        raise GridMismatch("marginals live on different grids")
    dx = a.grid.spacing()
    return float(np.abs(np.cumsum(a.weights - b.weights)[:-1]) @ dx)


def solve_martingale_tilt(weights, points, x, epsilon=1.0, bound=None):
    """Scalar ``h`` with ``sum_y y w(y) e^{h (y-x)/eps} / sum_y w(y) e^{h (y-x)/eps} = x``.

    Returns ``(h, drift, flagged)``; ``flagged`` is true when ``x`` is not
    strictly inside the support hull and ``h`` was clamped.
    """
    pts = np.asarray(points, dtype=float)
    with np.errstate(divide="ignore"):
        L = np.log(np.asarray(weights, dtype=float))[None, :]
    if bound is None:
        bound = TILT_BOUND / np.min(np.diff(pts))
    th, drift, flagged = solve_tilts(L, pts, np.array([float(x)]), bound)
    return float(th[0] * epsilon), float(drift[0]), bool(flagged[0])


# ---------------------------------------------------------------------------
# the alternating solver


@dataclass
class ChainParts:
    """Cost of a (possibly augmented) chain.

    ``pair[t]`` has shape ``(S_t, M)``: cost of moving from state ``s`` at
    ``t`` to grid point ``y``. ``unary`` is an optional cost on the final
    slice's states. Plain chains leave ``state_grid``/``next_state`` unset.
    """

    pair: list
    unary: Optional[np.ndarray] = None
    state_grid: Optional[list] = None
    next_state: Optional[list] = None

    @property
    def plain(self):
        return self.next_state is None

    def negated(self) -> "ChainParts":
        return ChainParts([-P for P in self.pair], None if self.unary is None else -self.unary,
                          self.state_grid, self.next_state)


def build_model(marginals: MarginalSequence, ref: ReferenceChain, parts: ChainParts, epsilon: float):
    N = marginals.n_steps
    if ref.grid != marginals.grid:
        raise GridMismatch("reference chain and marginals use different grids")
    if ref.n_steps != N or len(parts.pair) != N:
        raise ValidationError(f"need {N} reference kernels and cost tables, got {ref.n_steps} and {len(parts.pair)}")
    M = marginals.grid.size
    if parts.pair[0].shape[-1] != M:
        raise GridMismatch("cost tables do not match the grid")
    with np.errstate(divide="ignore"):
        log_init = np.log(ref.init)
    log_ref = ref.log_kernels()
    unary = [None] * (N + 1)
    unary[N] = parts.unary
    if parts.plain:
        return ChainModel(marginals.grid.points, log_init, log_ref, parts.pair, epsilon, unary=unary)
    sg = parts.state_grid
    log_ref = [L[sg[t]] for t, L in enumerate(log_ref)]
    return ChainModel(marginals.grid.points, log_init[sg[0]], log_ref, parts.pair, epsilon,
                      state_grid=sg, next_state=parts.next_state, unary=unary)


def plain_model(marginals: MarginalSequence, ref: ReferenceChain, cost: CostSpec, epsilon: float):
    if cost.tables[0].shape[0] != marginals.grid.size:
        raise GridMismatch("cost tables do not match the grid")
    return build_model(marginals, ref, ChainParts(cost.tables), epsilon)


def chain_expectation(plan: "TransportPlan", parts: ChainParts) -> float:
    """``E_P`` of the chain cost: pairwise terms plus the final-slice unary term."""
    margs = plan.state_marginals()
    total = 0.0
    for t in range(plan.n_steps):
        total += float(margs[t] @ (plan.kernels[t] * parts.pair[t]).sum(axis=1))
    if parts.unary is not None:
        total += float(margs[-1] @ parts.unary)
    return total


class SolverState:
    """Mutable iterate of the alternating scheme (scaled potentials ``v = u/eps``, ``theta = h/eps``)."""

    def __init__(self, model: ChainModel, weights, constrained=None, warm: Optional[DualPotentials] = None):
        self.model = model
        N, M = model.N, model.M
        self.weights = np.asarray(weights, dtype=float)
        with np.errstate(divide="ignore"):
            self.log_mu = np.log(self.weights)
        self.constrained = np.ones(N + 1, bool) if constrained is None else np.asarray(constrained, bool)
        eps = model.eps
        if warm is not None:
            if warm.u.shape != (N + 1, M) or warm.h.shape != (N, M):
                raise ValidationError("warm start has the wrong shape")
            self.v = warm.u / eps
            self.theta = np.nan_to_num(warm.h / eps)
        else:
            self.v = np.zeros((N + 1, M))
            self.theta = np.zeros((N, M))
        for t in range(N + 1):
            if self.constrained[t]:
                self.v[t][self.weights[t] <= 0] = -np.inf
        self.bound = TILT_BOUND / np.min(np.diff(model.x))
        self.B = model.backward(self.v, self.theta)
        self.F = model.forward(self.v, self.theta)
        self.flagged = np.zeros((N, M), bool)
        self._lognorm = None

    # exposed block updates ------------------------------------------------
    def u_step(self, t):
        self.v[t] = self.model.u_update(self.log_mu[t], self.F[t], self.B[t], t)
        return self.v[t] * self.model.eps

    def h_step(self, t):
        th, drift, flagged, lognorm = self.model.h_update(self.v, self.F[t], self.B[t + 1], t, self.theta[t],
                                                          self.bound)
        self.theta[t] = th
        self.flagged[t] = flagged
        self._lognorm = lognorm
        return th * self.model.eps

    def refresh(self):
        self.B = self.model.backward(self.v, self.theta)
        self.F = self.model.forward(self.v, self.theta)

    # sweeps ---------------------------------------------------------------
    def u_sweep(self, times=None):
        m = self.model
        times = range(m.N + 1) if times is None else times
        todo = set(t for t in times if self.constrained[t])
        for t in range(m.N + 1):
            if t in todo:
                self.u_step(t)
            if t < m.N:
                self.F[t + 1] = m.forward_step(self.v, self.theta, self.F[t], t)

    def h_sweep(self, steps=None):
        m = self.model
        steps = range(m.N) if steps is None else steps
        todo = set(steps)
        for t in range(m.N - 1, -1, -1):
            self._lognorm = None
            if t in todo:
                self.h_step(t)
            if self._lognorm is not None:
                self.B[t] = self._lognorm
            else:
                self.B[t] = m.backward_step(self.v, self.theta, self.B[t + 1], t)

    def gauge_fix(self):
        shifts = np.zeros(self.model.N + 1)
        for t in range(1, self.model.N + 1):
            if not self.constrained[t]:
                continue
            fin = np.isfinite(self.v[t])
            a = float(self.weights[t][fin] @ self.v[t][fin])
            self.v[t][fin] -= a
            shifts[t] = a
        self.v[0][np.isfinite(self.v[0])] += shifts.sum()
        ahead = np.cumsum(shifts[::-1])[::-1]
        for t in range(self.model.N):
            self.B[t] = self.B[t] - ahead[t + 1]

    def potentials(self) -> DualPotentials:
        eps = self.model.eps
        return DualPotentials(self.v * eps, self.theta * eps, eps)

    def log_partition(self):
        return self.model.log_partition(self.v, self.B[0])


def _sup_change(a, b):
    fin = np.isfinite(a) & np.isfinite(b)
    if not fin.any():
        return 0.0
    return float(np.max(np.abs(a[fin] - b[fin])))


class _Anderson:
    """Type-II Anderson mixing with restart on residual growth."""

    def __init__(self, memory):
        self.memory = memory
        self.G = []
        self.R = []
        self.best = np.inf

    def propose(self, g, r):
        rn = float(np.max(np.abs(r))) if r.size else 0.0
        if rn > 10.0 * self.best:
            self.G, self.R = [], []
        self.best = min(self.best, rn)
        self.G.append(g)
        self.R.append(r)
        if len(self.R) > self.memory + 1:
            self.G.pop(0)
            self.R.pop(0)
        if len(self.R) < 2:
            return g
        dR = np.diff(np.array(self.R), axis=0).T
        dG = np.diff(np.array(self.G), axis=0).T
        gamma, *_ = np.linalg.lstsq(dR, r, rcond=None)
        z = g - dG @ gamma
        return z if np.all(np.isfinite(z)) else g


def run_alternating(state: SolverState, cfg: SolverConfig, max_iters=None, report=None):
    """Iterate u-sweep / h-sweep until the potentials move less than ``cfg.tol``."""
    eps = state.model.eps
    max_iters = cfg.max_iters if max_iters is None else max_iters
    report = SolveReport() if report is None else report
    history = []
    accel = _Anderson(cfg.anderson) if cfg.anderson > 0 else None
    fin = np.isfinite(state.v)
    nv = int(fin.sum())
    t0 = time.perf_counter()
    k = 0
    backup = None  # plain iterate behind the last accelerated one
    best = np.inf
    rejects = 0
    for k in range(1, max_iters + 1):
        prev_v, prev_t = state.v.copy(), state.theta.copy()
        state.u_sweep()
        state.h_sweep()
        state.gauge_fix()
        if not (np.all(np.isfinite(state.theta)) and np.isfinite(state.log_partition())):
            if backup is None:
                raise NumericalOverflow("non-finite potentials; epsilon too small for the cost scale?")
            change = np.inf
        else:
            change = eps * (_sup_change(state.v, prev_v) + _sup_change(state.theta, prev_t))
        if backup is not None and change > 2.0 * best:
            # the extrapolation made things worse: fall back to the plain iterate
            state.v, state.theta = backup
            state.refresh()
            accel.G, accel.R, accel.best = [], [], np.inf
            rejects += 1
            if rejects >= MAX_ANDERSON_REJECTS:
                accel = None
            backup = None
            change = best
            report.change_history.append(change)
            if cfg.record_history:
                history.append((state.v.copy(), state.theta.copy()))
            continue
        backup = None
        best = min(best, change)
        report.change_history.append(change)
        if cfg.record_history:
            history.append((state.v.copy(), state.theta.copy()))
        if change < cfg.tol:
            report.converged = True
            break
        if accel is not None:
            g = np.concatenate([state.v[fin], state.theta.ravel()])
            z0 = np.concatenate([prev_v[fin], prev_t.ravel()])
            z = accel.propose(g, g - z0)
            if z is not g:
                backup = (state.v.copy(), state.theta.copy())
                state.v[fin] = z[:nv]
                state.theta = z[nv:].reshape(state.theta.shape).copy()
                state.B = state.model.backward(state.v, state.theta)
    report.iters += k
    report.final_sup_change = report.change_history[-1] if report.change_history else 0.0
    report.wall_time += time.perf_counter() - t0
    if cfg.record_history and history:
        fv, ft = state.v, state.theta
        report.per_iter_error.extend(eps * (_sup_change(v, fv) + _sup_change(th, ft)) for v, th in history)
    return report


def finalize(state: SolverState, cfg: SolverConfig, report: SolveReport):
    """Build the plan and fill diagnostics; raise on infeasible rows or max iterations."""
    m = state.model
    state.refresh()
    init, kernels = m.plan_arrays(state.v, state.theta, state.B)
    if m.plain:
        plan = TransportPlan(Grid(m.x), init, kernels)
    else:
        plan = TransportPlan(Grid(m.x), init, kernels, m.state_grid, m.next_state)
    margs = plan.marginals()
    sel = state.constrained
    report.marginal_defect = float(np.max(np.abs(margs[sel] - state.weights[sel])))
    report.max_drift = plan.max_drift()
    pot = state.potentials()
    report.dual_value = dual_objective(pot, state.weights, state.log_partition(), state.constrained)
    report.primal_value = primal_objective_chain(plan, m)
    report.duality_gap = report.primal_value - report.dual_value
    masses = np.array([mass for mass, _ in plan.conditional_drift()]).reshape(state.flagged.shape)
    report.flagged_rows = int((state.flagged & (masses >= MASS_FLOOR)).sum())
    # clamped rows only mean infeasibility once the iteration has settled
    if report.converged and report.flagged_rows and report.max_drift > cfg.drift_tol:
        raise RowInfeasible(
            f"{report.flagged_rows} rows with mass >= {MASS_FLOOR} cannot be centred "
            f"(max drift {report.max_drift:.3g}); check convex order near the grid boundary"
        )
    if not report.converged and cfg.raise_on_max_iters:
        raise MaxItersExceeded(
            f"no convergence in {report.iters} iterations (last change {report.final_sup_change:.3g})",
            pot, plan, report,
        )
    return pot, plan, report


def dual_objective(pot: DualPotentials, weights, log_z, constrained=None) -> float:
    """``sum_t <u_t, mu_t> - eps log E_Q[exp(G / eps)]``."""
    total = 0.0
    for t, (u, w) in enumerate(zip(pot.u, weights)):
        if constrained is not None and not constrained[t]:
            continue
        fin = np.isfinite(u) & (w > 0)
        total += float(u[fin] @ w[fin])
    return total - pot.epsilon * log_z


def primal_objective_chain(plan: TransportPlan, model: ChainModel) -> float:
    """``E_P[c] + eps KL(P || Q)``, the KL term accumulated kernel row by kernel row."""
    eps = model.eps
    with np.errstate(divide="ignore", invalid="ignore"):
        p0 = plan.init
        pos = p0 > 0
        kl = float(np.sum(p0[pos] * (np.log(p0[pos]) - model.log_init[pos])))
    cost = 0.0
    margs = plan.state_marginals()
    for t in range(plan.n_steps):
        P = plan.kernels[t]
        pos = P > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            row_kl = np.where(pos, P * (np.log(np.where(pos, P, 1.0)) - model.log_ref[t]), 0.0).sum(axis=1)
        kl += float(margs[t] @ row_kl)
        cost += float(margs[t] @ (P * model.cost[t]).sum(axis=1))
    if model.unary[-1] is not None:
        cost += float(margs[-1] @ model.unary[-1])
    return cost + eps * kl


def primal_objective(plan: TransportPlan, ref: ReferenceChain, cost: CostSpec, epsilon: float) -> float:
    with np.errstate(divide="ignore"):
        model = ChainModel(plan.grid.points, np.log(ref.init), ref.log_kernels(), cost.tables, epsilon)
    return primal_objective_chain(plan, model)


def solve(marginals: MarginalSequence, ref: ReferenceChain, cost: CostSpec,
          cfg: SolverConfig = SolverConfig(), warm: Optional[DualPotentials] = None):
    """Solve the entropic MMOT problem; returns ``(potentials, plan, report)``."""
    return solve_chain(marginals, ref, ChainParts(cost.tables), cfg, warm)


def solve_chain(marginals: MarginalSequence, ref: ReferenceChain, parts: ChainParts,
                cfg: SolverConfig = SolverConfig(), warm: Optional[DualPotentials] = None):
    if cfg.check_convex_order:
        require_convex_order(marginals, cfg.convex_tol)
    model = build_model(marginals, ref, parts, cfg.epsilon)
    state = SolverState(model, marginals.weights, warm=warm)
    report = run_alternating(state, cfg)
    return finalize(state, cfg, report)


# ---------------------------------------------------------------------------
# solution files


def save_solution(path, pot: DualPotentials, grid: Grid, report: SolveReport, marginals=None, extra=None):
    obj = pot.to_json()
    obj["grid"] = grid.points.tolist()
    rep = report.to_json()
    rep.pop("per_iter_error", None)
    rep.pop("change_history", None)
    obj["report"] = rep
    if marginals is not None:
        obj["marginals"] = marginals.to_json()
    if extra:
        obj.update(extra)
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_solution(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc.msg})") from exc
    pot = DualPotentials.from_json(obj)
    if "grid" not in obj:
        raise ValidationError(f"{path}: missing grid")
    return pot, Grid(obj["grid"]), obj
