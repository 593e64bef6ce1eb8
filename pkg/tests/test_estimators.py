import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from unfold.estimators import PoissonUnfolder, RidgeUnfolder, check_counts
from unfold.fastpath import RidgeModel, ridge_estimate
from unfold.forward_model import GaussianKernel
from unfold.simulate import BinnedCounts
from unfold.splines import eval_basis


def test_check_counts(gmm_medium_data, gmm_edges):
    assert check_counts(gmm_medium_data) is gmm_medium_data
    y = check_counts(list(gmm_medium_data.counts), gmm_edges)
    np.testing.assert_array_equal(y.counts, gmm_medium_data.counts)
    with pytest.raises(ValueError):
        check_counts(gmm_medium_data.counts)
    with pytest.raises(ValueError):
        check_counts(gmm_medium_data, gmm_edges + 1)
    with pytest.raises(ValueError):
        check_counts([1.0, np.nan], [0, 1, 2])


def test_params_and_clone():
    est = PoissonUnfolder(n_interior_knots=10, delta=1e-4, random_state=3)
    params = est.get_params()
    assert params["n_interior_knots"] == 10 and params["delta"] == 1e-4 and params["random_state"] == 3
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(order=3)
    assert est.order == 3
    assert RidgeUnfolder(delta=2e-6).get_params()["delta"] == 2e-6


def test_unfitted_predict_raises():
    with pytest.raises(NotFittedError):
        RidgeUnfolder().predict([0.0])


def test_ridge_unfolder_matches_function(gmm_medium_data, gmm_response, gmm_omega_a, gmm_basis):
    est = RidgeUnfolder(delta=8.3e-7, kernel=GaussianKernel(1.0)).fit(gmm_medium_data)
    expected = ridge_estimate(gmm_medium_data, RidgeModel(gmm_response, gmm_omega_a, 8.3e-7))
    np.testing.assert_allclose(est.coef_, expected, rtol=1e-12)
    s = np.linspace(-7, 7, 11)
    np.testing.assert_allclose(est.predict(s), eval_basis(gmm_basis, s) @ expected)
    nn = RidgeUnfolder(delta=8.3e-7, nonnegative=True).fit(gmm_medium_data.counts, gmm_medium_data.bin_edges)
    assert np.all(nn.coef_ >= 0)


def test_poisson_unfolder_fixed_delta(gmm_medium_data):
    est = PoissonUnfolder(delta=8.3e-7, n_samples=300, random_state=1).fit(gmm_medium_data)
    assert est.delta_ == 8.3e-7 and est.trace_ is None
    assert est.chain_.draws.shape == (300, 30)
    again = clone(est).fit(gmm_medium_data)
    np.testing.assert_array_equal(again.coef_, est.coef_)
    f = est.predict(np.array([-2.0, 0.0, 2.0]))
    assert f[2] > f[1] and f[0] > f[1]
    band = est.credible_band()
    assert band.method == "credible" and np.all(band.lower <= band.upper)


def test_poisson_unfolder_mcem_and_band():
    edges = np.linspace(0, 4, 9)
    y = BinnedCounts(np.array([30, 60, 90, 100, 95, 70, 40, 20]), edges)
    est = PoissonUnfolder(n_interior_knots=3, kernel=GaussianKernel(0.3), n_em=3, n_samples=200, delta0=1e-3, random_state=5).fit(y)
    assert len(est.trace_.deltas) == 4 and est.delta_ == est.trace_.deltas[-1]
    band = est.confidence_band(n_bc=1, r_bc=2, r_uq=20)
    assert band.method == "bc_percentile" and band.grid.size == 200
    np.testing.assert_allclose(band.point, est.predict(band.grid))
