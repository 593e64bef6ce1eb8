"""scikit-learn style front ends.

``fit`` takes the observed histogram (a :class:`BinnedCounts` or a count
vector together with ``bin_edges``) and ``predict`` evaluates the unfolded
intensity at true-space points.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._random import child_seed
from .empirical_bayes import McemConfig, run_mcem
from .fastpath import RidgeModel, ridge_estimate
from .forward_model import GaussianKernel, build_response_matrix
from .inference import PosteriorModel, nnls_init, sample_posterior
from .simulate import BinnedCounts
from .splines import aristotelian_matrix, build_basis, curvature_matrix, eval_basis
from .uncertainty import BiasCorrectionConfig, bc_percentile_band, credible_band

__all__ = ["PoissonUnfolder", "RidgeUnfolder", "check_counts"]


def check_counts(y, bin_edges=None) -> BinnedCounts:
    """Coerce ``y`` to :class:`BinnedCounts`, validating shape and values."""
    if isinstance(y, BinnedCounts):
        if bin_edges is not None and not np.allclose(bin_edges, y.bin_edges):
            raise ValueError("bin_edges disagree with the histogram's own edges")
        return y
    if bin_edges is None:
        raise ValueError("bin_edges are required for a plain count vector")
    arr = check_array(np.asarray(y, dtype=float).reshape(1, -1), ensure_all_finite=True)[0]
    return BinnedCounts(arr, bin_edges)


class _UnfolderBase(BaseEstimator):
    def _setup(self, counts: BinnedCounts):
        domain = self.domain if self.domain is not None else (counts.bin_edges[0], counts.bin_edges[-1])
        basis = build_basis(tuple(domain), self.n_interior_knots, self.order)
        kernel = self.kernel if self.kernel is not None else GaussianKernel(1.0)
        self.basis_ = basis
        self.response_ = build_response_matrix(kernel, basis, counts.bin_edges)
        self.omega_a_ = aristotelian_matrix(curvature_matrix(basis), self.gamma_left, self.gamma_right)
        self.counts_ = counts

    def predict(self, s) -> np.ndarray:
        """Unfolded intensity at the points ``s``."""
        check_is_fitted(self, "coef_")
        s = check_array(np.asarray(s, dtype=float).reshape(-1, 1)).ravel()
        return eval_basis(self.basis_, s) @ self.coef_


class PoissonUnfolder(_UnfolderBase):
    """Empirical-Bayes unfolding with the Poisson likelihood.

    Parameters
    ----------
    n_interior_knots : int
    order : int
    domain : tuple, optional
        True-space interval; defaults to the span of the bin edges.
    kernel : SmearingKernel, optional
        Defaults to a unit Gaussian.
    gamma_left, gamma_right : float
        Boundary penalty weights.
    delta : float, optional
        Fixed prior scale; estimated by MCEM when None.
    n_em, n_samples, delta0 : MCEM settings.
    random_state : int
    """

    def __init__(
        self,
        n_interior_knots=26,
        order=4,
        domain=None,
        kernel=None,
        gamma_left=5.0,
        gamma_right=5.0,
        delta=None,
        n_em=30,
        n_samples=1000,
        delta0=1e-5,
        random_state=0,
    ):
        self.n_interior_knots = n_interior_knots
        self.order = order
        self.domain = domain
        self.kernel = kernel
        self.gamma_left = gamma_left
        self.gamma_right = gamma_right
        self.delta = delta
        self.n_em = n_em
        self.n_samples = n_samples
        self.delta0 = delta0
        self.random_state = random_state

    def fit(self, y, bin_edges=None):
        counts = check_counts(y, bin_edges)
        self._setup(counts)
        init = nnls_init(counts, self.basis_)
        self.trace_ = None
        if self.delta is None:
            cfg = McemConfig(self.delta0, self.n_em, self.n_samples, beta_init=init, rng_seed=child_seed(self.random_state, 1))
            self.delta_, self.trace_ = run_mcem(PosteriorModel(self.response_, counts, self.omega_a_, self.delta0), cfg)
            init = self.trace_.chain_means[-1]
        else:
            self.delta_ = float(self.delta)
        model = PosteriorModel(self.response_, counts, self.omega_a_, self.delta_)
        self.chain_ = sample_posterior(model, self.n_samples, init, rng_seed=child_seed(self.random_state, 2))
        self.coef_ = self.chain_.mean()
        return self

    def credible_band(self, alpha=0.025, grid=None):
        check_is_fitted(self, "coef_")
        return credible_band(self.chain_, self.basis_, alpha, grid)

    def confidence_band(self, n_bc=5, r_bc=10, r_uq=200, alpha=0.025, grid=None):
        """Bias-corrected bootstrap percentile band at the fitted prior scale."""
        check_is_fitted(self, "coef_")
        cfg = BiasCorrectionConfig(n_bc, r_bc, self.n_samples, rng_seed=child_seed(self.random_state, 3))
        return bc_percentile_band(
            self.counts_, self.delta_, self.response_, self.omega_a_, self.basis_, cfg, r_uq, alpha, grid, beta_hat=self.coef_
        )


class RidgeUnfolder(_UnfolderBase):
    """Gaussian-approximation unfolding at a fixed prior scale ``delta``."""

    def __init__(self, delta=1e-6, n_interior_knots=26, order=4, domain=None, kernel=None, gamma_left=5.0, gamma_right=5.0, nonnegative=False):
        self.delta = delta
        self.n_interior_knots = n_interior_knots
        self.order = order
        self.domain = domain
        self.kernel = kernel
        self.gamma_left = gamma_left
        self.gamma_right = gamma_right
        self.nonnegative = nonnegative

    def fit(self, y, bin_edges=None):
        counts = check_counts(y, bin_edges)
        self._setup(counts)
        self.model_ = RidgeModel(self.response_, self.omega_a_, self.delta)
        self.coef_ = ridge_estimate(counts, self.model_, nonnegative=self.nonnegative)
        return self
