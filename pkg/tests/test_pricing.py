import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmot.exceptions import UnsupportedPayoff, ValidationError
from mmot.fixtures import tiny_sequence
from mmot.oracle import TinyInstance, lp_bounds
from mmot.pricing import (
    PayoffSpec,
    PriceBounds,
    TransactionCostSpec,
    calibration_constant,
    price_bounds,
    widen,
    widen_calibration,
    widen_transaction,
)
from mmot.reference import build_reference
from mmot.solver import SolverConfig, TransportPlan


def tiny(seed, n_steps=2, m=5):
    seq = tiny_sequence(np.random.default_rng(seed), n_steps, m)
    return seq, build_reference(seq.grid, seq.times, sigma=0.3)


def test_linear_payoff_collapses_to_mean(small_gbm):
    fx = small_gbm
    res = price_bounds(fx.marginals, fx.ref, PayoffSpec.linear())
    m0 = fx.marginals.means()[0]
    assert res.lower == pytest.approx(m0, abs=1e-8)
    assert res.upper == pytest.approx(m0, abs=1e-8)


@pytest.mark.parametrize("K", [0.8, 1.0, 1.3])
def test_vanilla_call_is_marginal_determined(small_gbm, K):
    fx = small_gbm
    res = price_bounds(fx.marginals, fx.ref, PayoffSpec.vanilla_call(K))
    exact = fx.marginals[-1].call_prices([K])[0]
    assert res.lower == pytest.approx(exact, abs=1e-8)
    assert res.upper == pytest.approx(exact, abs=1e-8)
    assert res.lower <= res.upper + 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_spread_abs_brackets_lp(seed):
    seq, ref = tiny(seed, 2, 5)
    x = seq.grid.points
    M = x.size
    table = np.abs(x[None, None, :] - x[:, None, None]) * np.ones((M, M, M))
    lp = lp_bounds(TinyInstance(seq, table))
    eps = 0.02
    res = price_bounds(seq, ref, PayoffSpec.spread_abs(), SolverConfig(epsilon=eps, tol=1e-10, max_iters=20000))
    slack = max(1e-3, 3 * eps * np.log(M))
    # entropic plans are feasible, so they cannot beat the LP
    assert lp.min_value - 1e-7 <= res.lower <= lp.min_value + slack
    assert lp.max_value - slack <= res.upper <= lp.max_value + 1e-7


def test_custom_table_matches_spread_abs():
    seq, ref = tiny(11, 2, 4)
    x = seq.grid.points
    table = np.abs(x[None, None, :] - x[:, None, None]) * np.ones((4, 4, 4))
    cfg = SolverConfig(epsilon=0.1, tol=1e-11)
    a = price_bounds(seq, ref, PayoffSpec.spread_abs(), cfg)
    b = price_bounds(seq, ref, PayoffSpec.custom(table), cfg)
    assert a.lower == pytest.approx(b.lower, abs=1e-8)
    assert a.upper == pytest.approx(b.upper, abs=1e-8)


def test_asian_bounds_bracket_lp_within_bucket_error():
    seq, ref = tiny(5, 2, 5)
    x = seq.grid.points
    M = x.size
    K = float(np.median(x))
    table = np.maximum((x[None, :, None] + x[None, None, :]) / 2 - K, 0) * np.ones((M, M, M))
    lp = lp_bounds(TinyInstance(seq, table))
    res = price_bounds(seq, ref, PayoffSpec.asian_call(K, buckets=400), SolverConfig(epsilon=0.02, tol=1e-10,
                                                                                       max_iters=20000))
    slack = 3 * 0.02 * np.log(M) + 1.0 / 399
    assert lp.min_value - slack <= res.lower <= lp.min_value + slack
    assert lp.max_value - slack <= res.upper <= lp.max_value + slack


def test_forward_start_bounds_ordered(small_gbm):
    fx = small_gbm
    res = price_bounds(fx.marginals, fx.ref, PayoffSpec.forward_start(1.0))
    assert res.lower < res.upper
    assert all(r.converged for r in res.reports)


def test_payoff_evaluate():
    P = np.array([[1.0, 1.2, 0.9], [1.0, 0.8, 1.4]])
    assert PayoffSpec.asian_call(1.0).evaluate(P).tolist() == pytest.approx([0.05, 0.1])
    assert PayoffSpec.forward_start(1.0).evaluate(P).tolist() == pytest.approx([0.0, 0.6])
    assert PayoffSpec.spread_abs().evaluate(P).tolist() == pytest.approx([0.1, 0.4])
    assert PayoffSpec.vanilla_call(1.0, 1).evaluate(P).tolist() == pytest.approx([0.2, 0.0])
    assert PayoffSpec.linear().scaled(2).evaluate(P).tolist() == pytest.approx([1.8, 2.8])


def test_custom_payoff_limits():
    seq, _ = tiny(1, 1, 4)
    with pytest.raises(ValidationError):
        PayoffSpec.custom(np.zeros((3, 3))).chain_parts(seq.grid, 1)
    with pytest.raises(UnsupportedPayoff):
        PayoffSpec.custom(np.zeros((4,) * 5)).chain_parts(seq.grid, 4)
    with pytest.raises(UnsupportedPayoff):
        PayoffSpec("digital")


# widening ----------------------------------------------------------------------


def test_transaction_widening_example():
    b = widen(PriceBounds(4.23, 4.57), gamma=0.05)
    lo, hi = b.widened
    assert lo == pytest.approx(4.18, abs=1e-12) and hi == pytest.approx(4.62, abs=1e-12)


def test_calibration_widening_example():
    b = widen(PriceBounds(4.23, 4.57), gamma=0.05, delta=0.10)
    lo, hi = b.widened
    assert (round(lo, 10), round(hi, 10)) == (4.13, 4.67)
    assert b.mid == pytest.approx(4.40, abs=1e-12)


def test_zero_rates_and_zero_deltas_leave_bounds():
    b = PriceBounds(1.0, 2.0)
    w = widen_transaction(b, None, TransactionCostSpec.flat(0.0, 3), increments=[0.1, 0.2, 0.3])
    assert w.widened == (1.0, 2.0)
    assert widen_calibration(b, [0.0, 0.0], 1.0, 0.5, 2.0).widened == (1.0, 2.0)


def test_identity_plan_has_no_turnover():
    seq, _ = tiny(2, 2, 4)
    M = seq.grid.size
    w = seq.weights[0]
    plan = TransportPlan(seq.grid, w, [np.eye(M), np.eye(M)])
    g = widen_transaction(PriceBounds(0.0, 1.0), plan, TransactionCostSpec.flat(0.3, 2))
    assert g.gamma == 0.0


@given(st.lists(st.floats(0, 0.01), min_size=3, max_size=3), st.lists(st.floats(0, 1), min_size=3, max_size=3),
       st.floats(0, 10))
def test_gamma_additive_and_homogeneous(k, inc, lam):
    b = PriceBounds(0.0, 1.0)
    full = widen_transaction(b, None, TransactionCostSpec(tuple(k)), increments=inc).gamma
    parts = sum(
        widen_transaction(b, None, TransactionCostSpec(tuple(k[s] if s == t else 0.0 for s in range(3))),
                          increments=inc).gamma
        for t in range(3)
    )
    assert full == pytest.approx(parts, rel=1e-12, abs=1e-15)
    scaled = widen_transaction(b, None, TransactionCostSpec(tuple(lam * r for r in k)), increments=inc).gamma
    assert scaled == pytest.approx(lam * full, rel=1e-12, abs=1e-15)


def test_calibration_widening_uses_stability_constant():
    b = widen_calibration(PriceBounds(1.0, 2.0), [0.01, 0.03], 1.0, 0.5, 2.0, lipschitz_payoff=2.0)
    assert calibration_constant(1.0, 0.5, 2.0) == pytest.approx(4.0)
    assert b.delta == pytest.approx(2.0 * 4.0 * 0.03)


@given(st.floats(-5, 5), st.floats(0, 5), st.floats(0, 1), st.floats(0, 1))
def test_widened_contains_bounds(lo, width, g, d):
    b = PriceBounds(lo, lo + width, g, d)
    wl, wh = b.widened
    assert wl <= b.lower and wh >= b.upper


def test_price_bounds_validation():
    with pytest.raises(ValidationError):
        PriceBounds(2.0, 1.0)
    with pytest.raises(ValidationError):
        TransactionCostSpec((-0.1,))
    with pytest.raises(ValidationError):
        widen_transaction(PriceBounds(0, 1), None, TransactionCostSpec((0.1,)), increments=[0.1, 0.2])
