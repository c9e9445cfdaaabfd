"""Append a maturity to a solved problem without starting from scratch.

The new period starts at zero potentials. A frozen phase first fits only
the two new blocks (the last marginal potential and the last martingale
potential) against cached prefix messages, which costs ``O(M^2)`` per
iteration. Joint refinement over all blocks follows.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ValidationError
from .marginals import Marginal, MarginalSequence, require_convex_order
from .reference import ReferenceChain
from .solver import (
    ChainParts,
    DualPotentials,
    SolveReport,
    SolverConfig,
    SolverState,
    _Anderson,
    _sup_change,
    build_model,
    finalize,
    run_alternating,
)


@dataclass(frozen=True)
class IncrementalConfig(SolverConfig):
    k_warm: int = 500
    k_refine: int = 5000
    frozen_tol: Optional[float] = None  # defaults to tol

    @property
    def frozen_stop(self) -> float:
        return self.tol if self.frozen_tol is None else self.frozen_tol

    def __post_init__(self):
        super().__post_init__()
        if self.k_warm < 0 or self.k_refine < 0:
            raise ValidationError("k_warm and k_refine must be >= 0")


def extend_sequence(old: MarginalSequence, new_marginal: Marginal, new_time: float) -> MarginalSequence:
    if new_marginal.grid != old.grid:
        raise ValidationError("new marginal lives on a different grid")
    t_old = float(old.times[-1])
    if not new_time > t_old:
        raise ValidationError(f"new time {new_time} must exceed the last time {t_old}")
    return old.append(new_marginal, float(new_time))


def frozen_phase(state: SolverState, k_warm: int, tol: float, anderson: int = 0) -> int:
    """Fit ``u_T`` and ``h_{T-1}`` with the prefix held fixed; returns iterations.

    The prefix is frozen as a law, not just as raw potentials: the forward
    message into ``T`` is built from the cached prefix message with the new
    step's rows normalised, so the time ``T-1`` marginal the new blocks see
    is the one the old solution produced. Old potentials are not touched.
    """
    m = state.model
    T = m.N
    eps = m.eps
    F_prev = state.F[T - 1]
    zero = np.zeros(m.sizes[T])
    accel = _Anderson(anderson) if anderson > 0 else None
    fin = np.isfinite(state.v[T])
    nv = int(fin.sum())
    k = 0
    for k in range(1, k_warm + 1):
        v_old = state.v[T].copy()
        th_old = state.theta[T - 1].copy()
        B_last = m.backward_step(state.v, state.theta, zero, T - 1)
        F_T = m.forward_step(state.v, state.theta, F_prev - B_last, T - 1)
        if state.constrained[T]:
            state.v[T] = m.u_update(state.log_mu[T], F_T, zero, T)
        th, _, flagged, _ = m.h_update(state.v, F_prev, zero, T - 1, state.theta[T - 1], state.bound)
        state.theta[T - 1] = th
        state.flagged[T - 1] = flagged
        change = eps * (_sup_change(state.v[T], v_old) + _sup_change(state.theta[T - 1], th_old))
        if change < tol:
            break
        if accel is not None:
            g = np.concatenate([state.v[T][fin], state.theta[T - 1]])
            z = accel.propose(g, g - np.concatenate([v_old[fin], th_old]))
            state.v[T][fin] = z[:nv]
            state.theta[T - 1] = z[nv:]
    return k


def absorb_last_step(state: SolverState):
    """Fold the new step's row normalisers into ``u_{T-1}`` so the prefix law is unchanged."""
    m = state.model
    T = m.N
    B_last = m.backward_step(state.v, state.theta, np.zeros(m.sizes[T]), T - 1)
    fin = np.isfinite(state.v[T - 1])
    state.v[T - 1][fin] -= B_last[fin]
    state.refresh()


def append_period(prev: DualPotentials, old: MarginalSequence, new_marginal: Marginal, new_time: float,
                  ref: ReferenceChain, parts: ChainParts, cfg: IncrementalConfig = IncrementalConfig()):
    """Warm-started solve of the problem with one more maturity.

    ``ref`` and ``parts`` describe the extended problem. Returns
    ``(potentials, plan, report)``; the report carries the iteration counts
    and wall times of both phases.
    """
    seq = extend_sequence(old, new_marginal, new_time)
    if cfg.check_convex_order:
        require_convex_order(seq, cfg.convex_tol)
    N_old = old.n_steps
    M = old.grid.size
    if prev.u.shape != (N_old + 1, M) or prev.h.shape != (N_old, M):
        raise ValidationError("previous potentials do not match the old marginals")
    model = build_model(seq, ref, parts, cfg.epsilon)
    if not model.plain:
        raise ValidationError("incremental appends support plain chains only")
    scale = prev.epsilon / cfg.epsilon
    u = np.vstack([prev.u * scale, np.zeros((1, M))])
    h = np.vstack([prev.h * scale, np.zeros((1, M))])
    state = SolverState(model, seq.weights, warm=DualPotentials(u, h, cfg.epsilon))
    report = SolveReport()

    t0 = time.perf_counter()
    report.frozen_iters = frozen_phase(state, cfg.k_warm, cfg.frozen_stop, cfg.anderson)
    report.frozen_time = time.perf_counter() - t0

    t1 = time.perf_counter()
    absorb_last_step(state)
    if cfg.k_refine > 0:
        run_alternating(state, cfg, max_iters=cfg.k_refine, report=report)
    report.refine_iters = report.iters
    report.refine_time = time.perf_counter() - t1
    report.iters = report.frozen_iters + report.refine_iters
    report.wall_time = report.frozen_time + report.refine_time
    return finalize(state, cfg, report)
