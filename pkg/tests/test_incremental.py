import numpy as np
import pytest

from mmot.exceptions import ConvexOrderViolation, ValidationError
from mmot.fixtures import gbm_fixture
from mmot.incremental import IncrementalConfig, append_period, frozen_phase
from mmot.marginals import Marginal
from mmot.reference import build_reference
from mmot.solver import ChainParts, CostSpec, DualPotentials, SolverConfig, SolverState, build_model, solve


@pytest.fixture(scope="module")
def five_step():
    fx = gbm_fixture(n_steps=5, m=60)
    old = fx.marginals.head(5)
    old_ref = build_reference(fx.grid, old.times, sigma=0.2)
    cost_old = CostSpec.pairwise_abs(fx.grid, 4)
    pot, _, _ = solve(old, old_ref, cost_old)
    return fx, old, pot


def test_append_beats_cold_solve(five_step):
    fx, old, pot = five_step
    cost = CostSpec.pairwise_abs(fx.grid, 5)
    cfg = IncrementalConfig()
    p_inc, plan_inc, rep = append_period(pot, old, fx.marginals[5], fx.times[5], fx.ref, ChainParts(cost.tables), cfg)
    p_cold, plan_cold, cold = solve(fx.marginals, fx.ref, cost, SolverConfig())
    assert rep.converged
    assert rep.iters < cold.iters
    assert rep.refine_iters <= cold.iters
    assert rep.frozen_iters + rep.refine_iters == rep.iters
    # same optimum
    assert plan_inc.path_distance(plan_cold) <= 10 * cfg.tol + 1e-9
    assert rep.max_drift <= 1e-6 and rep.marginal_defect <= 1e-8


def test_frozen_phase_leaves_prefix_untouched(five_step):
    fx, old, pot = five_step
    cost = CostSpec.pairwise_abs(fx.grid, 5)
    model = build_model(fx.marginals, fx.ref, ChainParts(cost.tables), 0.5)
    M = fx.grid.size
    warm = DualPotentials(np.vstack([pot.u, np.zeros((1, M))]), np.vstack([pot.h, np.zeros((1, M))]), 0.5)
    state = SolverState(model, fx.marginals.weights, warm=warm)
    v0 = state.v.copy()
    th0 = state.theta.copy()
    k = frozen_phase(state, 50, 1e-11)
    assert k >= 1
    assert np.array_equal(state.v[:5], v0[:5])
    assert np.array_equal(state.theta[:4], th0[:4])
    assert not np.array_equal(state.v[5], v0[5])


def test_duplicate_final_marginal_approaches_identity(five_step):
    # the only martingale coupling of a law with itself is the identity,
    # which no finite potentials reach; the plan must drift toward it
    fx, old, pot = five_step
    times = np.r_[old.times, old.times[-1] + 0.25]
    ref = build_reference(fx.grid, times, sigma=0.2)
    parts = ChainParts(list(CostSpec.pairwise_abs(fx.grid, 4).tables) + [np.zeros((fx.grid.size,) * 2)])
    w = old.weights[-1]
    diag = []
    for k in (20, 200, 2000):
        cfg = IncrementalConfig(k_warm=k, k_refine=0, raise_on_max_iters=False)
        _, plan, rep = append_period(pot, old, old[-1], times[-1], ref, parts, cfg)
        diag.append(float(w @ np.diag(plan.kernels[-1])))
    assert diag[0] < diag[1] < diag[2]


def test_append_rejects_bad_input(five_step):
    fx, old, pot = five_step
    cost = CostSpec.pairwise_abs(fx.grid, 5)
    with pytest.raises(ValidationError):
        append_period(pot, old, fx.marginals[5], fx.times[3], fx.ref, ChainParts(cost.tables))
    x = fx.grid.points
    narrow = np.zeros(x.size)
    narrow[np.argmin(np.abs(x - 1.0))] = 1.0
    with pytest.raises(ConvexOrderViolation):
        append_period(pot, old, Marginal(fx.grid, narrow), fx.times[5], fx.ref, ChainParts(cost.tables))
    with pytest.raises(ValidationError):
        append_period(DualPotentials(pot.u[:3], pot.h[:2], 0.5), old, fx.marginals[5], fx.times[5], fx.ref,
                      ChainParts(cost.tables))
    with pytest.raises(ValidationError):
        IncrementalConfig(k_warm=-1)
