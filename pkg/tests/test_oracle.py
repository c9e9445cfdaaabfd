import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from mmot.exceptions import InfeasibleLP, ValidationError
from mmot.fixtures import tiny_sequence
from mmot.grid import Grid
from mmot.marginals import MarginalSequence
from mmot.oracle import TinyInstance, lp_bounds, simplex
from mmot.reference import build_reference
from mmot.solver import CostSpec, SolverConfig, solve


def enumerate_vertices(c, A, b):
    """Best objective over all basic feasible solutions, by brute force."""
    r = np.linalg.matrix_rank(A)
    best = np.inf
    for cols in itertools.combinations(range(A.shape[1]), r):
        B = A[:, cols]
        if np.linalg.matrix_rank(B) < r:
            continue
        xb = np.linalg.lstsq(B, b, rcond=None)[0]
        if np.max(np.abs(B @ xb - b)) > 1e-9 or xb.min() < -1e-12:
            continue
        best = min(best, float(c[list(cols)] @ xb))
    return best


def pruned_system(inst):
    """Drop paths through zero-mass points, which every feasible plan leaves empty."""
    A, b, paths = inst.constraints()
    w = inst.marginals.weights
    keep = np.all([w[t][paths[:, t]] > 0 for t in range(paths.shape[1])], axis=0)
    return inst.cost.ravel()[keep], A[:, keep], b


def three_point_chain():
    g = Grid(np.array([0.0, 1.0, 2.0]))
    return MarginalSequence(g, np.array([[0, 1, 0], [0.25, 0.5, 0.25], [0.375, 0.25, 0.375]]))


def test_forced_plan_min_equals_max():
    seq = MarginalSequence(Grid(np.array([1.0, 2.0, 3.0])), np.array([[0, 1.0, 0], [0.5, 0, 0.5]]))
    rng = np.random.default_rng(0)
    cost = rng.normal(size=(3, 3))
    lp = lp_bounds(TinyInstance(seq, cost))
    forced = 0.5 * cost[1, 0] + 0.5 * cost[1, 2]
    assert lp.min_value == pytest.approx(forced, abs=1e-12)
    assert lp.max_value == pytest.approx(forced, abs=1e-12)
    assert lp.argmin[1, 0] == pytest.approx(0.5) and lp.argmin[1, 2] == pytest.approx(0.5)


def test_identical_marginals_zero_cost_identity():
    g = Grid(np.array([0.0, 0.4, 1.0, 1.5]))
    w = np.array([0.1, 0.4, 0.3, 0.2])
    seq = MarginalSequence(g, np.vstack([w, w]))
    lp = lp_bounds(TinyInstance.from_pairwise(seq, CostSpec.pairwise_abs(g, 1).tables))
    assert lp.min_value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(np.diag(lp.argmin), w, atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_simplex_matches_vertex_enumeration_one_step(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(4, 6))
    seq = tiny_sequence(rng, 1, M)
    inst = TinyInstance(seq, rng.normal(size=(M, M)))
    c, A, b = pruned_system(inst)
    lp = lp_bounds(inst)
    assert lp.min_value == pytest.approx(enumerate_vertices(c, A, b), abs=1e-9)
    assert lp.max_value == pytest.approx(-enumerate_vertices(-c, A, b), abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_simplex_matches_vertex_enumeration_two_steps(seed):
    seq = three_point_chain()
    cost = np.random.default_rng(seed).normal(size=(3, 3, 3))
    inst = TinyInstance(seq, cost)
    c, A, b = pruned_system(inst)
    lp = lp_bounds(inst)
    assert lp.min_value == pytest.approx(enumerate_vertices(c, A, b), abs=1e-9)
    assert lp.max_value == pytest.approx(-enumerate_vertices(-c, A, b), abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_simplex_matches_highs(seed):
    rng = np.random.default_rng(100 + seed)
    N = 2
    M = int(rng.integers(4, 7))
    seq = tiny_sequence(rng, N, M)
    inst = TinyInstance(seq, rng.uniform(size=(M,) * (N + 1)))
    A, b, _ = inst.constraints()
    ref = linprog(inst.cost.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    lp = lp_bounds(inst)
    assert lp.min_value == pytest.approx(ref.fun, abs=1e-8)
    # argmin is feasible
    assert np.max(np.abs(A @ lp.argmin.ravel() - b)) < 1e-9
    assert lp.argmin.min() >= 0


def test_bland_rule_terminates_on_beale_cycling_example():
    # classic instance on which the largest-coefficient rule cycles
    c = np.array([0, 0, 0, -0.75, 150, -0.02, 6])
    A = np.array([
        [1, 0, 0, 0.25, -60, -0.04, 9],
        [0, 1, 0, 0.5, -90, -0.02, 3],
        [0, 0, 1, 0, 0, 1, 0],
    ])
    b = np.array([0, 0, 1.0])
    val, p, pivots = simplex(c, A, b)
    assert val == pytest.approx(-0.05, abs=1e-12)
    assert pivots < 50


def test_infeasible_lp_detected():
    g = Grid(np.array([0.0, 1.0, 2.0]))
    seq = MarginalSequence(g, np.array([[0.5, 0, 0.5], [0, 1.0, 0]]))
    with pytest.raises(InfeasibleLP):
        lp_bounds(TinyInstance(seq, np.zeros((3, 3))))


def test_size_caps():
    g = Grid(np.linspace(0, 1, 9))
    w = np.full(9, 1 / 9)
    with pytest.raises(ValidationError):
        TinyInstance(MarginalSequence(g, np.vstack([w, w])), np.zeros((9, 9)))
    g = Grid(np.linspace(0, 1, 5))
    w = np.full(5, 0.2)
    with pytest.raises(ValidationError):
        TinyInstance(MarginalSequence(g, np.vstack([w] * 5)), np.zeros((5,) * 5))
    with pytest.raises(ValidationError):
        TinyInstance(MarginalSequence(g, np.vstack([w, w])), np.zeros((5, 4)))


@given(st.integers(0, 10_000), st.sampled_from([0.5, 0.1, 0.02]))
def test_lp_min_below_entropic_primal(seed, eps):
    rng = np.random.default_rng(seed)
    seq = tiny_sequence(rng, int(rng.integers(1, 3)), int(rng.integers(4, 7)))
    cost = CostSpec.pairwise_abs(seq.grid, seq.n_steps)
    lp = lp_bounds(TinyInstance.from_pairwise(seq, cost.tables))
    ref = build_reference(seq.grid, seq.times, sigma=0.2)
    _, plan, rep = solve(seq, ref, cost, SolverConfig(epsilon=eps, tol=1e-10, max_iters=20000))
    assert lp.min_value <= rep.primal_value + 1e-9
    assert lp.min_value <= plan.pairwise_expectation(cost.tables) + 1e-7
