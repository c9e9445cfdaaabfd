import numpy as np
import pytest
from sklearn.base import clone

from mmot.estimators import BoundPricer, MarginalCalibrator, MartingaleSinkhorn, SparseGridBuilder
from mmot.exceptions import ValidationError
from mmot.fixtures import gbm_fixture
from mmot.marginals import OptionQuote


@pytest.fixture(scope="module")
def fx():
    return gbm_fixture(n_steps=3, m=50)


def test_sinkhorn_fit_and_params(fx):
    est = MartingaleSinkhorn(epsilon=0.5)
    assert est.fit(fx.marginals) is est
    assert est.report_.converged
    assert clone(est).get_params()["epsilon"] == 0.5
    assert not hasattr(clone(est), "plan_")
    assert est.transform().shape == (2 * 3 + 1, 50)


def test_sinkhorn_from_raw_weights(fx):
    a = MartingaleSinkhorn().fit(fx.marginals)
    b = MartingaleSinkhorn().fit(fx.marginals.weights, grid=fx.grid.points, times=fx.marginals.times)
    assert a.report_.dual_value == pytest.approx(b.report_.dual_value, abs=1e-12)
    with pytest.raises(ValidationError):
        MartingaleSinkhorn().fit(fx.marginals.weights)


def test_sinkhorn_samples_score(fx):
    est = MartingaleSinkhorn().fit(fx.marginals)
    idx = est.sample(1000, random_state=0)
    assert idx.shape == (1000, 4)
    assert np.isfinite(est.score(idx))
    assert np.array_equal(idx, est.sample(1000, random_state=0))


def test_bound_pricer_brackets(fx):
    p = BoundPricer(payoff="forward_start", strike=1.0).fit(fx.marginals)
    lo, hi = p.predict()
    assert lo <= hi
    with pytest.raises(ValidationError):
        BoundPricer(payoff="nope").fit(fx.marginals)


def test_calibrator_reprices(fx):
    seq = fx.marginals
    rows = [(float(seq.times[t]), K, float(seq[t].call_prices([K])[0]), 0.002)
            for t in (1, 2, 3) for K in (0.8, 1.0, 1.2)]
    cal = MarginalCalibrator(grid=fx.grid).fit(rows)
    pred = cal.predict([(r[0], r[1]) for r in rows])
    assert np.max(np.abs(pred - np.array([r[2] for r in rows]))) < 5e-3
    assert cal.transform().shape[1] == fx.grid.size
    with pytest.raises(ValidationError):
        cal.predict([(7.0, 1.0)])
    quotes = [OptionQuote(r[1], r[0], r[2], r[3]) for r in rows]
    alt = MarginalCalibrator(grid=fx.grid).fit(quotes)
    assert np.allclose(alt.transform(), cal.transform())


def test_sparse_builder(fx):
    b = SparseGridBuilder(threshold=0.02).fit(fx.marginals)
    out = b.transform(fx.marginals)
    assert out.grid is b.grid_ or out.grid == b.grid_
    assert np.allclose(out.weights.sum(axis=1), 1.0)
    assert np.allclose(out.means(), fx.marginals.means()[0], atol=1e-9)
