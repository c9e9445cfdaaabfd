import math

import numpy as np
import pytest

from mmot.fixtures import gbm_fixture
from mmot.solver import SolverConfig, solve, CostSpec
from mmot.studies import (
    STUDIES,
    expected_running_max,
    fit_loglog,
    rate_candidates,
    study_convergence,
    study_donsker,
    study_epsilon,
    study_runtime,
    tail_slope,
)


def test_single_iteration_is_insufficient():
    r = study_convergence(n_steps=3, m=50, max_iters=1)
    assert r.notes["status"] == "insufficient"
    assert math.isnan(r.fitted_slope)
    assert not any(row["tail"] for row in r.rows)


def test_slope_reproducible_across_seeds():
    slopes = [study_convergence(n_steps=3, m=50, seed=s, init_noise=0.5).fitted_slope for s in range(3)]
    assert max(slopes) - min(slopes) <= 0.01
    assert all(s < 0 for s in slopes)


def test_rate_candidates_labelled():
    c = rate_candidates(0.42)
    assert c["rate_two_thirds"] == pytest.approx(0.58 ** (2 / 3))
    assert c["rate_cube_root"] == pytest.approx((1 - 0.42**2) ** (1 / 3))


def test_tail_slope_recovers_geometric_decay():
    errs = list(0.9 ** np.arange(300))
    slope, _, n = tail_slope(errs, 1e-12)
    assert slope == pytest.approx(math.log(0.9), rel=1e-10)
    assert n > 5


def test_fit_loglog_exact_power():
    x = np.array([5, 10, 20, 50.0])
    s, c = fit_loglog(x, 3 * x**-0.5)
    assert s == pytest.approx(-0.5) and math.exp(c) == pytest.approx(3.0)


def test_running_max_matches_monte_carlo():
    fx = gbm_fixture(n_steps=3, m=40)
    _, plan, _ = solve(fx.marginals, fx.ref, CostSpec.zero(fx.grid, 3))
    idx, _ = plan.sample(200_000, 0)
    mc = fx.grid.points[idx].max(axis=1).mean()
    assert expected_running_max(plan) == pytest.approx(mc, abs=3e-3)


def test_small_donsker_and_epsilon_runs():
    d = study_donsker(ns=(2, 4), n_ref=8, m=40)
    assert [r["n_steps"] for r in d.rows] == [2, 4, 8]
    assert math.isfinite(d.fitted_slope)
    e = study_epsilon(epsilons=(0.1, 0.5), ref_epsilon=0.05, n_steps=2, m=30, budget=500)
    assert {r["epsilon"] for r in e.rows} == {0.1, 0.5}
    assert e.notes["best_error_epsilon"] in (0.1, 0.5)


def test_csv_is_deterministic_and_plain():
    a = study_convergence(n_steps=2, m=30).csv_text()
    b = study_convergence(n_steps=2, m=30).csv_text()
    assert a == b
    assert a.startswith("iter,change,error,tail\n") and "\r" not in a


def test_runtime_skips_over_budget():
    r = study_runtime(cells=((2, 30),), budget_seconds=1e-9)
    assert r.rows[0]["status"] == "skipped"


def test_gnuplot_script_for_every_study():
    for kind in STUDIES:
        from mmot.studies import StudyReport, _PLOTS

        x, y, _ = _PLOTS[kind]
        rep = StudyReport(kind, [x, y])
        assert "plot 'f.csv' using 1:2" in rep.gnuplot("f.csv")
