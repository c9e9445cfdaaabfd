"""Numerical studies behind the ``mmot study`` subcommand.

Each study returns a :class:`StudyReport` whose CSV rows hold only
deterministic quantities. Wall-clock timings go into ``notes`` (and hence
the JSON summary), so repeated runs produce byte-identical CSV files.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .decoupled import solve_decoupled
from .fixtures import gbm_fixture, random_lognormal_mixture, spread_last
from .grid import SparseGridConfig, make_sparse, make_uniform
from .incremental import IncrementalConfig, append_period
from .marginals import ModelParams, generate, project_marginals
from .pricing import PayoffSpec, price_bounds
from .reference import build_reference
from .solver import (
    ChainParts,
    CostSpec,
    DualPotentials,
    SolverConfig,
    chain_expectation,
    solve,
    solve_chain,
    wasserstein1,
)

KINDS = ("convergence", "donsker", "epsilon", "incremental", "sparse", "stability", "runtime")


@dataclass
class StudyReport:
    kind: str
    columns: list
    rows: list = field(default_factory=list)
    fitted_slope: float = float("nan")
    fitted_constant: float = float("nan")
    notes: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c, "")) for c in self.columns])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def to_json(self) -> dict:
        return {"kind": self.kind, "fitted_slope": _num(self.fitted_slope),
                "fitted_constant": _num(self.fitted_constant), "n_rows": len(self.rows),
                "notes": {k: _num(v) for k, v in self.notes.items()}}

    def gnuplot(self, csv_path) -> str:
        x, y, logscale = _PLOTS[self.kind]
        cols = {c: i + 1 for i, c in enumerate(self.columns)}
        return "\n".join([
            "set datafile separator ','",
            "set key autotitle columnhead",
            f"set logscale {logscale}" if logscale else "unset logscale",
            f"set xlabel '{x}'",
            f"set ylabel '{y}'",
            f"plot '{csv_path}' using {cols[x]}:{cols[y]} with linespoints",
            "",
        ])


_PLOTS = {
    "convergence": ("iter", "error", "y"),
    "donsker": ("n_steps", "error", "xy"),
    "epsilon": ("epsilon", "error_pct", "x"),
    "incremental": ("n_old", "append_iters", ""),
    "sparse": ("points", "lower", ""),
    "stability": ("delta", "plan_change", "xy"),
    "runtime": ("m", "iters", ""),
}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _num(v):
    if isinstance(v, (float, np.floating)) and not math.isfinite(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def fit_loglog(xs, ys):
    """Least-squares slope and intercept of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, icpt = np.polyfit(lx, ly, 1)
    return float(slope), float(icpt)


# ---------------------------------------------------------------------------
# convergence


def tail_window(errors, tol, transient=1e-2, floor_factor=100.0):
    """Indices of the asymptotic regime: past the transient, above the noise floor."""
    e = np.asarray(errors, dtype=float)
    if e.size < 2 or not e[0] > 0:
        return np.array([], dtype=int)
    sel = (e > floor_factor * tol) & (e <= transient * e[0])
    return np.flatnonzero(sel)


def tail_slope(errors, tol, min_points=5):
    """Slope of ``log(error)`` per iteration over the tail; nan when too short."""
    idx = tail_window(errors, tol)
    if idx.size < min_points:
        return float("nan"), float("nan"), int(idx.size)
    slope, icpt = np.polyfit(idx.astype(float), np.log(np.asarray(errors)[idx]), 1)
    return float(slope), float(icpt), int(idx.size)


def rate_candidates(kappa):
    a = (1.0 - kappa) ** (2.0 / 3.0)
    b = (1.0 - kappa**2) ** (1.0 / 3.0)
    return {"rate_two_thirds": a, "log_rate_two_thirds": math.log(a),
            "rate_cube_root": b, "log_rate_cube_root": math.log(b)}


def study_convergence(n_steps=10, m=150, epsilon=0.5, vol=0.2, tol=1e-10, max_iters=6000,
                      seed=0, init_noise=0.0, lo=0.4, hi=2.0) -> StudyReport:
    """Per-iteration error of the plain alternating scheme and its tail slope.

    ``init_noise > 0`` starts from seeded random potentials instead of zero,
    which probes whether the asymptotic slope depends on the starting point.
    """
    fx = gbm_fixture(n_steps, m, vol, lo=lo, hi=hi)
    cost = CostSpec.pairwise_abs(fx.grid, n_steps)
    warm = None
    if init_noise > 0:
        rng = np.random.default_rng(seed)
        warm = DualPotentials(init_noise * rng.standard_normal((n_steps + 1, m)),
                              init_noise * rng.standard_normal((n_steps, m)), epsilon)
    cfg = SolverConfig(epsilon=epsilon, tol=tol, max_iters=max_iters, anderson=0, raise_on_max_iters=False)
    t0 = time.perf_counter()
    _, _, rep = solve(fx.marginals, fx.ref, cost, cfg, warm=warm)
    wall = time.perf_counter() - t0
    errs = rep.per_iter_error
    slope, icpt, n_tail = tail_slope(errs, tol)
    report = StudyReport("convergence", ["iter", "change", "error", "tail"])
    tail = set(tail_window(errs, tol).tolist()) if n_tail >= 5 else set()
    for k, (c, e) in enumerate(zip(rep.change_history, errs)):
        report.rows.append({"iter": k + 1, "change": c, "error": e, "tail": k in tail})
    report.fitted_slope, report.fitted_constant = slope, icpt
    D = fx.grid.diameter()
    kappa = epsilon / (cost.lipschitz * D + epsilon)
    report.notes.update({"status": "ok" if n_tail >= 5 else "insufficient", "tail_points": n_tail,
                         "iters": rep.iters, "converged": rep.converged, "kappa": kappa,
                         "diameter": D, "lipschitz": cost.lipschitz, "seconds": wall})
    report.notes.update(rate_candidates(kappa))
    return report


# ---------------------------------------------------------------------------
# Donsker


def expected_running_max(plan) -> float:
    """``E[max_t X_t]`` under a Markov plan, by propagating (position, running max)."""
    x = plan.grid.points
    M = x.size
    R = np.diag(plan.init)  # R[i, m]: at grid point i with running max at grid point m
    below = np.arange(M)[:, None] <= np.arange(M)[None, :]  # [j, m]: j <= m
    idx = np.arange(M)
    for K in plan.kernels:
        A = R.T @ K  # A[m, j]
        Rn = np.where(below, A.T, 0.0)
        Rn[idx, idx] += np.where(~below.T, A, 0.0).sum(axis=0)
        R = Rn
    return float(R.sum(axis=0) @ x)


def donsker_proxy(dt):
    return math.sqrt(dt) * math.log(1.0 / dt)


def study_donsker(ns=(5, 10, 20, 50), n_ref=200, m=160, vol=0.2, horizon=1.0, epsilon=0.5,
                  lo=0.4, hi=2.0) -> StudyReport:
    """Lookback price ``E[max_t X_t]`` under the entropic plan as ``N`` grows.

    The transport cost is zero, so each plan is the relative-entropy
    projection of the reference walk onto the marginal and martingale
    constraints. Plans are assembled step by step (see
    :mod:`mmot.decoupled`), which keeps ``N = 200`` tractable.
    """
    grid = make_uniform(lo, hi, m)
    prices, iters, secs = {}, {}, {}
    for N in sorted(set(ns) | {n_ref}):
        times = np.linspace(0.0, horizon, N + 1)
        seq = generate(ModelParams(model="gbm", vol=vol), times, grid)
        ref = build_reference(grid, times, sigma=vol)
        t0 = time.perf_counter()
        _, plan, rep = solve_decoupled(seq, ref, ChainParts(CostSpec.zero(grid, N).tables),
                                       SolverConfig(epsilon=epsilon))
        secs[N] = time.perf_counter() - t0
        prices[N] = expected_running_max(plan)
        iters[N] = rep.iters
    report = StudyReport("donsker", ["n_steps", "dt", "price", "error", "proxy", "newton_iters"])
    errs, proxies = [], []
    for N in ns:
        dt = horizon / N
        err = abs(prices[N] - prices[n_ref])
        errs.append(err)
        proxies.append(donsker_proxy(dt))
        report.rows.append({"n_steps": N, "dt": dt, "price": prices[N], "error": err,
                            "proxy": proxies[-1], "newton_iters": iters[N]})
    report.rows.append({"n_steps": n_ref, "dt": horizon / n_ref, "price": prices[n_ref], "error": 0.0,
                        "proxy": donsker_proxy(horizon / n_ref), "newton_iters": iters[n_ref]})
    report.fitted_slope, _ = fit_loglog(ns, errs)
    report.fitted_constant = float(np.median(np.array(errs) / np.array(proxies)))
    report.notes.update({"reference_n": n_ref, "reference_price": prices[n_ref],
                         "seconds": sum(secs.values()), "payoff": "running maximum"})
    return report


# ---------------------------------------------------------------------------
# epsilon sweep


def study_epsilon(epsilons=(0.01, 0.1, 0.5), ref_epsilon=0.002, n_steps=6, m=60, strike=1.0, vol=0.2,
                  tol=1e-8, budget=4000) -> StudyReport:
    """Asian-call lower bound across ``epsilon`` with a fixed iteration budget.

    The error is measured against the bound at ``ref_epsilon``, the closest
    computable stand-in for the unregularised value.
    """
    fx = gbm_fixture(n_steps, m, vol)
    pay = PayoffSpec.asian_call(strike)
    parts = pay.chain_parts(fx.grid, n_steps)

    def run(eps, max_iters):
        cfg = SolverConfig(epsilon=eps, tol=tol, max_iters=max_iters, anderson=0,
                           raise_on_max_iters=False, record_history=False)
        t0 = time.perf_counter()
        _, plan, rep = solve_chain(fx.marginals, fx.ref, parts, cfg)
        return chain_expectation(plan, parts), rep, time.perf_counter() - t0

    ref_price, ref_rep, ref_sec = run(ref_epsilon, 4 * budget)
    report = StudyReport("epsilon", ["epsilon", "iters", "converged", "price", "error_pct"])
    secs = {}
    for eps in epsilons:
        price, rep, sec = run(eps, budget)
        secs[f"seconds_eps_{eps}"] = sec
        report.rows.append({"epsilon": eps, "iters": rep.iters, "converged": rep.converged, "price": price,
                            "error_pct": 100.0 * abs(price - ref_price) / abs(ref_price)})
    best = min(report.rows, key=lambda r: r["error_pct"])
    fastest = min(report.rows, key=lambda r: r["iters"])
    report.notes.update({"reference_epsilon": ref_epsilon, "reference_price": ref_price,
                         "reference_converged": ref_rep.converged, "best_error_epsilon": best["epsilon"],
                         "fewest_iters_epsilon": fastest["epsilon"], "seconds_reference": ref_sec, **secs})
    return report


# ---------------------------------------------------------------------------
# incremental


def study_incremental(n_olds=(4, 5, 6, 7, 8), m=100, epsilon=0.5, timing_sizes=(100, 200), max_refine=5000,
                      repeats=3) -> StudyReport:
    """Warm appends against cold solves, then per-append time at two grid sizes."""
    report = StudyReport("incremental", ["case", "n_old", "m", "frozen_iters", "refine_iters",
                                         "append_iters", "cold_iters"])
    for n_old in n_olds:
        N = n_old + 1
        fx = gbm_fixture(N, m, 0.2)
        old = fx.marginals.head(N)
        ref_old = build_reference(fx.grid, fx.times[:N], sigma=0.2)
        cfg = IncrementalConfig(epsilon=epsilon, k_refine=max_refine, record_history=False)
        prev, _, _ = solve(old, ref_old, CostSpec.pairwise_abs(fx.grid, n_old), cfg)
        cost = CostSpec.pairwise_abs(fx.grid, N)
        _, _, rep = append_period(prev, old, fx.marginals[N], fx.times[N], fx.ref, ChainParts(cost.tables), cfg)
        _, _, cold = solve(fx.marginals, fx.ref, cost, cfg)
        report.rows.append({"case": "iterations", "n_old": n_old, "m": m, "frozen_iters": rep.frozen_iters,
                            "refine_iters": rep.refine_iters, "append_iters": rep.iters, "cold_iters": cold.iters})
    times = {}
    for M in timing_sizes:
        n_old = 4
        fx = gbm_fixture(n_old + 1, M, 0.2)
        old = fx.marginals.head(n_old + 1)
        ref_old = build_reference(fx.grid, fx.times[:-1], sigma=0.2)
        prev, _, _ = solve(old, ref_old, CostSpec.pairwise_abs(fx.grid, n_old),
                           SolverConfig(epsilon=epsilon, record_history=False))
        # fixed budget: both phases run their full iteration counts
        cfg = IncrementalConfig(epsilon=epsilon, tol=1e-300, frozen_tol=1e-300, anderson=0, k_warm=50,
                                raise_on_max_iters=False, record_history=False)
        parts = ChainParts(CostSpec.pairwise_abs(fx.grid, n_old + 1).tables)
        best = math.inf
        for _ in range(repeats):
            _, _, rep = append_period(prev, old, fx.marginals[-1], fx.times[-1], fx.ref, parts, cfg)
            best = min(best, rep.wall_time)
        times[M] = best
        report.rows.append({"case": "timing", "n_old": n_old, "m": M, "frozen_iters": rep.frozen_iters,
                            "refine_iters": rep.refine_iters, "append_iters": rep.iters, "cold_iters": ""})
    a, b = timing_sizes[0], timing_sizes[-1]
    ratio = times[b] / times[a]
    report.fitted_constant = ratio
    report.fitted_slope = math.log(ratio) / math.log(b / a)
    report.notes.update({f"append_seconds_m{M}": t for M, t in times.items()})
    report.notes["time_ratio"] = ratio
    return report


# ---------------------------------------------------------------------------
# sparse grids


def study_sparse(m=400, lo=0.2, hi=5.0, n_steps=4, horizon=0.25, vol=0.15, threshold=1e-5, max_depth=9,
                 epsilon=0.05, strike=1.0) -> StudyReport:
    """Forward-start bounds for a concentrated law on a uniform and an adaptive grid."""
    times = np.linspace(0.0, horizon, n_steps + 1)
    uni = make_uniform(lo, hi, m)
    seq_u = generate(ModelParams(model="gbm", vol=vol), times, uni)
    sparse = make_sparse(seq_u, SparseGridConfig(threshold=threshold, max_depth=max_depth))
    seq_s = project_marginals(seq_u, sparse, mean=float(seq_u.means()[0]))
    pay = PayoffSpec.forward_start(strike)
    report = StudyReport("sparse", ["grid", "points", "lower", "upper", "lower_iters", "upper_iters"])
    secs = {}
    for name, g, s in (("uniform", uni, seq_u), ("sparse", sparse, seq_s)):
        ref = build_reference(g, times, sigma=vol)
        t0 = time.perf_counter()
        b = price_bounds(s, ref, pay, SolverConfig(epsilon=epsilon, record_history=False))
        secs[name] = time.perf_counter() - t0
        report.rows.append({"grid": name, "points": g.size, "lower": b.lower, "upper": b.upper,
                            "lower_iters": b.reports[0].iters, "upper_iters": b.reports[1].iters})
    u, s = report.rows
    report.fitted_constant = abs(s["lower"] - u["lower"]) / abs(u["lower"])
    report.notes.update({"point_fraction": s["points"] / u["points"], "relative_error": report.fitted_constant,
                         "seconds_uniform": secs["uniform"], "seconds_sparse": secs["sparse"],
                         "speedup": secs["uniform"] / secs["sparse"]})
    return report


# ---------------------------------------------------------------------------
# stability


def study_stability(trials=10, seed=7) -> StudyReport:
    """Perturb the last marginal by a martingale spread and compare plans.

    Two bounds are checked per trial: ``((L_c + eps D) / eps) delta`` and
    ``L_c ||delta||_1 (1 + N / eps)``, with ``delta`` the W1 size of the
    perturbation.
    """
    rng = np.random.default_rng(seed)
    report = StudyReport("stability", ["trial", "n_steps", "m", "epsilon", "delta", "plan_change",
                                       "bound_lipschitz", "bound_robust", "within_both"])
    for i in range(trials):
        N = int(rng.integers(2, 6))
        M = int(rng.choice([50, 80]))
        fx = random_lognormal_mixture(rng, N, M)
        eps = float(rng.choice([0.1, 0.5, 1.0]))
        pert = spread_last(fx.marginals, rng.uniform(0.05, 0.3), int(rng.integers(1, 4)))
        cost = CostSpec.pairwise_abs(fx.grid, N)
        cfg = SolverConfig(epsilon=eps, tol=1e-10, record_history=False)
        _, p1, _ = solve(fx.marginals, fx.ref, cost, cfg)
        _, p2, _ = solve(pert, fx.ref, cost, cfg)
        delta = wasserstein1(fx.marginals[N], pert[N])
        change = p1.path_distance(p2)
        L, D = cost.lipschitz, fx.grid.diameter()
        b1 = (L + eps * D) / eps * delta
        b2 = L * delta * (1 + N / eps)
        report.rows.append({"trial": i, "n_steps": N, "m": M, "epsilon": eps, "delta": delta,
                            "plan_change": change, "bound_lipschitz": b1, "bound_robust": b2,
                            "within_both": bool(change <= b1 and change <= b2)})
    report.notes["violations"] = sum(not r["within_both"] for r in report.rows)
    return report


# ---------------------------------------------------------------------------
# runtime table


def study_runtime(cells=((5, 100), (10, 100), (10, 150), (20, 200), (50, 400)), budget_seconds=600.0,
                  epsilon=0.5, probe_iters=3) -> StudyReport:
    """Iterations to converge per ``(N, M)``; rows projected past the budget are skipped.

    A short probe measures the per-iteration cost and the full run is skipped
    when that cost times ``max_iters`` would exceed the budget.
    """
    report = StudyReport("runtime", ["n_steps", "m", "status", "iters", "converged"])
    for N, M in cells:
        fx = gbm_fixture(N, M, 0.2)
        cost = CostSpec.pairwise_abs(fx.grid, N)
        probe = SolverConfig(epsilon=epsilon, max_iters=probe_iters, raise_on_max_iters=False, record_history=False)
        t0 = time.perf_counter()
        solve(fx.marginals, fx.ref, cost, probe)
        per_iter = (time.perf_counter() - t0) / probe_iters
        cfg = SolverConfig(epsilon=epsilon, raise_on_max_iters=False, record_history=False)
        if per_iter * cfg.max_iters > budget_seconds:
            report.rows.append({"n_steps": N, "m": M, "status": "skipped", "iters": "", "converged": ""})
            report.notes[f"projected_seconds_{N}x{M}"] = per_iter * cfg.max_iters
            continue
        t0 = time.perf_counter()
        _, _, rep = solve(fx.marginals, fx.ref, cost, cfg)
        report.notes[f"seconds_{N}x{M}"] = time.perf_counter() - t0
        report.rows.append({"n_steps": N, "m": M, "status": "ok", "iters": rep.iters, "converged": rep.converged})
    return report


STUDIES = {
    "convergence": study_convergence,
    "donsker": study_donsker,
    "epsilon": study_epsilon,
    "incremental": study_incremental,
    "sparse": study_sparse,
    "stability": study_stability,
    "runtime": study_runtime,
}


def dump_summary(report: StudyReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True)
