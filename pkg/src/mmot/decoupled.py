"""Step-by-step solver for plain chains.

With a Markov reference, pairwise costs and martingale constraints that
condition on the current grid point only, the chain rule for relative
entropy splits the optimum into independent one-step problems: each step
couples ``mu_t`` and ``mu_{t+1}`` against the reference rows. Gluing the
step solutions end to end gives the joint optimum.

Each step is solved by Newton's method on the column potential. The row
tilts are eliminated exactly, which leaves a smooth concave function whose
Hessian is a Schur complement of row covariances. This converges in a few
dozen iterations where the alternating scheme needs thousands on long,
finely resolved horizons. It is a second route to the same optimum and is
checked against :func:`mmot.solver.solve` in the tests.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import MaxItersExceeded, RowInfeasible, ValidationError
from .marginals import MarginalSequence, require_convex_order
from .reference import ReferenceChain
from .solver import (
    TILT_BOUND,
    ChainParts,
    DualPotentials,
    SolveReport,
    SolverConfig,
    SolverState,
    build_model,
    finalize,
)


MAX_STEP = 30.0


@dataclass
class StepSolution:
    w: np.ndarray  # scaled column potential, -inf off the target support
    theta: np.ndarray
    log_norm: np.ndarray  # row log-normalisers
    iters: int
    defect: float
    converged: bool


def _row_stats(base, theta, x, ahead):
    a = base + theta[:, None] * (x[None, :] - x[:, None]) + ahead[None, :]
    norm = _kernels.lse_rows(base, theta, x, ahead)
    with np.errstate(invalid="ignore"):
        P = np.exp(a - norm[:, None])
    P[~np.isfinite(P)] = 0.0
    return P, norm


def solve_step(base, x, mu, nu, bound, w0=None, tol=1e-12, max_iter=200):
    """Newton ascent for one step ``mu -> nu`` with row-centred kernels.

    ``base`` holds ``log Q(i, j) - c(i, j) / eps``. The objective is
    ``<nu, w> - sum_i mu_i min_theta log sum_j exp(base + theta d + w)``.
    """
    M = x.size
    cols = nu > 0
    rows = mu > 0
    if not cols.any() or not rows.any():
        raise ValidationError("empty marginal")
    log_nu = np.log(nu[cols])
    w = np.full(M, -np.inf)
    w[cols] = 0.0 if w0 is None else np.where(np.isfinite(w0[cols]), w0[cols], 0.0)
    theta = np.zeros(M)
    atol = 1e-13 * max(1.0, float(np.abs(x).max()))
    d = x[None, cols] - x[rows][:, None]
    mr = mu[rows]

    def evaluate(w, theta):
        th, _, status, _ = _kernels.tilt_rows(base, w, np.zeros(M), x, theta, float(bound), atol, 100)
        P, norm = _row_stats(base, th, x, w)
        val = float(nu[cols] @ w[cols] - mr @ norm[rows])
        return th, status, P, norm, val

    theta, status, P, norm, val = evaluate(w, theta)
    k = 0
    defect = np.inf
    for k in range(1, max_iter + 1):
        Pr = P[rows][:, cols]
        grad = nu[cols] - mr @ Pr
        defect = float(np.max(np.abs(grad)))
        if defect <= tol:
            break
        q = Pr * d
        var = (q * d).sum(axis=1)
        H = np.diag(mr @ Pr) - (Pr.T * mr) @ Pr
        ok = var > 0
        H -= (q[ok].T * (mr[ok] / var[ok])) @ q[ok]
        # H is positive semidefinite with the constants (and, with every row
        # centred, the linear functions) in its kernel
        evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
        keep = evals > 1e-12 * max(evals.max(), 1e-300)
        newton = evecs[:, keep] @ ((evecs[:, keep].T @ grad) / evals[keep])
        fixed = log_nu - np.log(np.maximum(mr @ Pr, 1e-300))
        moved = False
        for step in (newton, fixed, grad):
            # near-singular curvature can ask for enormous moves; keep them local
            big = np.max(np.abs(step))
            if big > MAX_STEP:
                step = step * (MAX_STEP / big)
            slope = float(grad @ step)
            if not slope > 0:
                continue
            t = 1.0
            while t >= 1e-10:
                w_new = w.copy()
                w_new[cols] = w[cols] + t * step
                th_new, st_new, P_new, norm_new, val_new = evaluate(w_new, theta)
                if val_new >= val + 1e-4 * t * slope:
                    moved = True
                    break
                t *= 0.5
            if moved:
                break
        if not moved:
            break
        w, theta, status, P, norm, val = w_new, th_new, st_new, P_new, norm_new, val_new
        w[cols] -= float(nu[cols] @ w[cols])
    converged = defect <= tol
    P, norm = _row_stats(base, theta, x, w)
    clamped = (status >= 3) & rows
    if clamped.any():
        drift = np.abs((P * (x[None, :] - x[:, None])).sum(axis=1))[clamped]
        if drift.max() > 1e-6:
            raise RowInfeasible(f"{int(clamped.sum())} rows cannot be centred (max drift {drift.max():.3g})")
    return StepSolution(w, theta, norm, k, defect, converged)


def solve_decoupled(marginals: MarginalSequence, ref: ReferenceChain, parts: ChainParts,
                    cfg: SolverConfig = SolverConfig(), step_tol=1e-10, max_newton=200):
    """Solve a plain chain one step at a time; returns ``(potentials, plan, report)``.

    The report's ``iters`` counts Newton iterations summed over steps.
    """
    if not parts.plain:
        raise ValidationError("the step-wise solver needs pairwise costs")
    if cfg.check_convex_order:
        require_convex_order(marginals, cfg.convex_tol)
    t0 = time.perf_counter()
    pair = list(parts.pair)
    if parts.unary is not None:
        pair[-1] = pair[-1] + np.asarray(parts.unary)[None, :]
    model = build_model(marginals, ref, ChainParts(pair), cfg.epsilon)
    x = model.x
    N, M = model.N, model.M
    W = marginals.weights
    bound = TILT_BOUND / np.min(np.diff(x))
    report = SolveReport()
    v = np.zeros((N + 1, M))
    theta = np.zeros((N, M))
    steps = []
    for t in range(N):
        s = solve_step(model.base[t], x, W[t], W[t + 1], bound, tol=step_tol, max_iter=max_newton)
        steps.append(s)
        theta[t] = s.theta
        report.iters += s.iters
        report.change_history.append(s.defect)
    with np.errstate(divide="ignore"):
        v[0] = np.log(W[0]) - model.log_init - steps[0].log_norm
    for t in range(1, N):
        v[t] = steps[t - 1].w - steps[t].log_norm
    v[N] = steps[-1].w
    v[~np.isfinite(v)] = -np.inf
    report.converged = all(s.converged for s in steps)
    report.final_sup_change = max(s.defect for s in steps)
    report.wall_time = time.perf_counter() - t0
    eps = model.eps
    pot = DualPotentials(v * eps, theta * eps, eps).gauge_fixed(W)
    state = SolverState(model, W, warm=pot)
    loose = SolverConfig(epsilon=cfg.epsilon, tol=cfg.tol, drift_tol=cfg.drift_tol,
                         raise_on_max_iters=False, check_convex_order=False, anderson=0)
    pot, plan, report = finalize(state, loose, report)
    if not report.converged and cfg.raise_on_max_iters:
        raise MaxItersExceeded(f"a step did not converge (defect {report.final_sup_change:.3g})", pot, plan, report)
    return pot, plan, report
