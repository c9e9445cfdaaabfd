"""Log-domain message passing on chain-structured Gibbs measures.

A chain has ``N + 1`` time slices. Slice ``t`` holds ``S_t`` states, each
attached to a grid point ``g_t(s)``. From a state ``s`` at ``t - 1`` the chain
moves to grid point ``y`` and lands in state ``next_t[s, y]``. Plain Markov
chains on the grid use ``S_t = M`` and the identity for both maps; augmented
chains carry extra path information (a running average, the path history)
in the state so path-dependent costs stay local.

The Gibbs weight of a path is::

    Q(path) * exp( sum_t v_t(x_t) + sum_t theta_t(x_{t-1}) (x_t - x_{t-1})
                   - sum_t c_t(s_{t-1}, x_t) / eps - unary_N(s_N) / eps )

with scaled potentials ``v = u / eps`` and ``theta = h / eps``.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from ._tilt import solve_tilts
from .exceptions import NumericalOverflow


def lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis))
    return out + np.squeeze(m, axis=axis)


class Segments:
    """Grouped log-sum-exp along axis 0 for a fixed label vector."""

    def __init__(self, labels, n_groups):
        labels = np.asarray(labels).ravel()
        self.order = np.argsort(labels, kind="stable")
        sl = labels[self.order]
        self.starts = np.flatnonzero(np.r_[True, sl[1:] != sl[:-1]])
        self.groups = sl[self.starts]
        self.counts = np.diff(np.r_[self.starts, sl.size])
        self.n_groups = n_groups

    def lse(self, vals):
        v = vals[self.order]
        mx = np.maximum.reduceat(v, self.starts, axis=0)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.exp(v - np.repeat(mx, self.counts, axis=0))
        s = np.add.reduceat(e, self.starts, axis=0)
        out = np.full((self.n_groups,) + vals.shape[1:], -np.inf)
        with np.errstate(divide="ignore"):
            out[self.groups] = mx + np.log(s)
        return out


class ChainModel:
    """Static description of a chain problem at a fixed ``eps``."""

    def __init__(self, x, log_init, log_ref, cost, eps, state_grid=None, next_state=None,
                 unary=None):
        self.x = np.asarray(x, dtype=float)
        self.M = self.x.size
        self.eps = float(eps)
        self.N = len(log_ref)
        self.log_init = np.asarray(log_init, dtype=float)
        self.log_ref = log_ref
        self.cost = cost
        self.plain = next_state is None
        if self.plain:
            self.state_grid = [np.arange(self.M)] * (self.N + 1)
            self.next_state = None
        else:
            self.state_grid = [np.asarray(g) for g in state_grid]
            self.next_state = [np.asarray(n) for n in next_state]
        self.sizes = [g.size for g in self.state_grid]
        self.unary = unary if unary is not None else [None] * (self.N + 1)
        self._zeros = np.zeros(self.M)
        self.base = []
        self.disp = []
        for t in range(self.N):
            b = log_ref[t] - cost[t] / self.eps
            if np.any(np.isnan(b)) or np.any(b == np.inf):
                raise NumericalOverflow("kernel contains nan/inf")
            self.base.append(b)
            g = self.state_grid[t]
            self.disp.append(self.x[None, :] - self.x[g][:, None])
        if not self.plain:
            self.fwd_seg = [Segments(n, self.sizes[t + 1]) for t, n in enumerate(self.next_state)]
            self.grid_seg = [Segments(g, self.M) for g in self.state_grid]

    # -- potentials -----------------------------------------------------
    def node(self, v, t):
        phi = v[t][self.state_grid[t]]
        if self.unary[t] is not None:
            phi = phi - self.unary[t] / self.eps
        return phi

    def edge(self, theta, t):
        """Edge log-weights for step ``t -> t+1`` (0-based step index)."""
        th = theta[t][self.state_grid[t]]
        return self.base[t] + th[:, None] * self.disp[t]

    def gather(self, a, t):
        """Values ``a`` on slice ``t+1`` seen from step ``t`` edges."""
        if self.plain:
            return a[None, :]
        return a[self.next_state[t]]

    def to_grid(self, a, t):
        if self.plain:
            return a
        return self.grid_seg[t].lse(a)

    # -- messages ---------------------------------------------------------
    def backward_step(self, v, theta, B_next, t):
        """B_t from B_{t+1} through step ``t``."""
        ahead = self.node(v, t + 1) + B_next
        if self.plain:
            return _kernels.lse_rows(self.base[t], theta[t], self.x, ahead)
        return lse(self.edge(theta, t) + self.gather(ahead, t), axis=1)

    def forward_step(self, v, theta, F_prev, t):
        """F_{t+1} from F_t through step ``t``."""
        behind = F_prev + self.node(v, t)
        if self.plain:
            return _kernels.lse_cols(self.base[t], theta[t], self.x, behind)
        vals = behind[:, None] + self.edge(theta, t)
        return self.fwd_seg[t].lse(vals.ravel())

    def backward(self, v, theta):
        B = [None] * (self.N + 1)
        B[self.N] = np.zeros(self.sizes[self.N])
        for t in range(self.N - 1, -1, -1):
            B[t] = self.backward_step(v, theta, B[t + 1], t)
        return B

    def forward(self, v, theta):
        F = [None] * (self.N + 1)
        F[0] = self.log_init
        for t in range(self.N):
            F[t + 1] = self.forward_step(v, theta, F[t], t)
        return F

    def log_partition(self, v, B0):
        return float(lse(self.log_init + self.node(v, 0) + B0, axis=0))

    # -- block updates ----------------------------------------------------
    def u_update(self, log_mu, F_t, B_t, t):
        """Closed-form v_t matching the time-t Gibbs marginal to ``mu_t``."""
        rest = F_t + B_t
        if self.unary[t] is not None:
            rest = rest - self.unary[t] / self.eps
        m = self.to_grid(rest, t)
        with np.errstate(invalid="ignore"):
            v_t = np.where(np.isfinite(log_mu), log_mu - m, -np.inf)
        if np.any(v_t == np.inf) or np.any(np.isnan(v_t)):
            raise NumericalOverflow(f"time {t}: target marginal has mass where the chain has none")
        return v_t

    def row_weights(self, v, F_prev, B_next, t):
        """Unnormalised law of (x_t, x_{t+1}) over grid pairs, without theta_t."""
        ahead = self.gather(self.node(v, t + 1) + B_next, t)
        vals = self.base[t] + ahead
        if self.plain:
            return vals + (F_prev + self.node(v, t))[:, None]
        vals = vals + (F_prev + self.node(v, t))[:, None]
        return self.grid_seg[t].lse(vals)

    def h_update(self, v, F_prev, B_next, t, theta0, bound):
        """Tilts for step ``t``; plain chains also return the new backward message ``B_t``."""
        atol = 1e-13 * max(1.0, np.abs(self.x).max())
        if self.plain:
            # every row is centred, including rows the plan never visits, so
            # continuation values stay martingale-consistent off the support
            ahead = self.node(v, t + 1) + B_next
            th, drift, status, lognorm = _kernels.tilt_rows(
                self.base[t], ahead, self._zeros, self.x, np.ascontiguousarray(theta0, dtype=float),
                float(bound), atol, 100)
            return th, drift, status >= 3, lognorm
        W = self.row_weights(v, F_prev, B_next, t)
        # W rows are grid points x_t; tilt by theta (y - x)
        th, drift, flagged = solve_tilts(W, self.x, self.x, bound, theta0=theta0, atol=atol)
        return th, drift, flagged, None

    # -- plan -------------------------------------------------------------
    def plan_arrays(self, v, theta, B):
        init = self.log_init + self.node(v, 0) + B[0]
        init = np.exp(init - lse(init, axis=0))
        kernels = []
        for t in range(self.N):
            ahead = self.gather(self.node(v, t + 1) + B[t + 1], t)
            a = self.edge(theta, t) + ahead
            P = np.exp(a - lse(a, axis=1)[:, None])
            P[~np.isfinite(P)] = 0.0
            kernels.append(P)
        return init, kernels
