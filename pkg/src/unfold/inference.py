"""Poisson likelihood, truncated Gaussian smoothness prior and posterior sampling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import _sampler
from ._random import child_seed
from .forward_model import IdentityKernel, ResponseMatrix, build_response_matrix
from .simulate import BinnedCounts
from .splines import PenaltyMatrix, SplineBasis

logger = logging.getLogger(__name__)

__all__ = [
    "PosteriorModel",
    "PosteriorChain",
    "log_likelihood",
    "log_prior",
    "log_posterior",
    "sample_posterior",
    "posterior_mean",
    "nnls_init",
    "effective_sample_size",
    "write_chain_csv",
]


def _counts_array(y) -> np.ndarray:
    if isinstance(y, BinnedCounts):
        return y.counts.astype(float)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or np.any(y < 0) or np.any(y != np.rint(y)):
        raise ValueError("observed counts must be a 1-D array of nonnegative integers")
    return y


def _matrix(K) -> np.ndarray:
    return K.entries if isinstance(K, ResponseMatrix) else np.asarray(K, dtype=float)


def _penalty(omega) -> np.ndarray:
    return omega.entries if isinstance(omega, PenaltyMatrix) else np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class PosteriorModel:
    """Everything that defines ``p(beta | y, delta)``."""

    K: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    omega_a: np.ndarray = field(repr=False)
    delta: float

    def __post_init__(self):
        k = np.array(_matrix(self.K), dtype=float)
        y = _counts_array(self.y).copy()
        om = np.array(_penalty(self.omega_a), dtype=float)
        n, p = k.shape
        if y.shape != (n,):
            raise ValueError(f"data has {y.size} bins but the response has {n} rows")
        if om.shape != (p, p):
            raise ValueError(f"penalty has shape {om.shape}, expected {(p, p)}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for a in (k, y, om):
            a.setflags(write=False)
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "omega_a", om)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n_basis(self) -> int:
        return self.K.shape[1]

    def with_data(self, y) -> "PosteriorModel":
        return PosteriorModel(self.K, y, self.omega_a, self.delta)


@dataclass(frozen=True)
class PosteriorChain:
    """Recorded MCMC draws (``S x p``) with acceptance diagnostics."""

    draws: np.ndarray = field(repr=False)
    acceptance_rates: np.ndarray = field(repr=False)
    seed: int | None = None
    burn_in_len: int = 0

    def __post_init__(self):
        d = np.asarray(self.draws, dtype=float)
        if d.ndim != 2:
            raise ValueError("draws must be a 2-D array")
        if np.any(d < 0):
            raise ValueError("posterior draws must be nonnegative")

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def mean(self) -> np.ndarray:
        return posterior_mean(self)

    def effective_sample_size(self) -> np.ndarray:
        return effective_sample_size(self.draws)


def log_likelihood(model: PosteriorModel, beta) -> float:
    """Poisson log-likelihood without the ``log(y_i!)`` constants.

    Returns ``-inf`` when a bin with counts has zero expected count.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise ValueError("coefficients must be nonnegative")
    mu = model.K @ beta
    y = model.y
    pos = y > 0
    if np.any(mu[pos] <= 0):
        return -np.inf
    return float(np.sum(y[pos] * np.log(mu[pos])) - mu.sum())


def log_prior(beta, omega_a, delta: float) -> float:
    """``(p/2) log(delta) - delta * beta' Omega_A beta``.

    Only the delta-free part of the truncated Gaussian normalizing constant is
    dropped, so differences in ``delta`` are exact.
    """
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < 0):
        raise ValueError("coefficients must be nonnegative")
    if not delta > 0:
        raise ValueError("delta must be positive")
    om = _penalty(omega_a)
    return float(0.5 * beta.size * np.log(delta) - delta * beta @ om @ beta)


def log_posterior(model: PosteriorModel, beta) -> float:
    """Unnormalized log posterior density."""
    return log_likelihood(model, beta) + log_prior(beta, model.omega_a, model.delta)


def _valid_start(model: PosteriorModel, beta_init) -> np.ndarray:
    beta = np.array(beta_init, dtype=float)
    if beta.shape != (model.n_basis,):
        raise ValueError(f"initial point has shape {beta.shape}, expected ({model.n_basis},)")
    if np.any(beta < 0) or not np.all(np.isfinite(beta)):
        raise ValueError("initial point must be finite and nonnegative")
    mu = model.K @ beta
    if np.any(mu[model.y > 0] <= 0):
        # lift the start so every observed bin has positive expected count
        lift = max(1e-6 * beta.max(), 1e-8)
        beta = beta + lift
        logger.debug("initial point lifted by %g to reach positive likelihood", lift)
    return beta


def sample_posterior(
    model: PosteriorModel,
    n_draws: int,
    beta_init,
    burn_in: int | None = None,
    rng_seed: int = 0,
) -> PosteriorChain:
    """Single-coordinate Metropolis-Hastings sampler.

    Parameters
    ----------
    model : PosteriorModel
    n_draws : int
        Number of recorded sweeps S.
    beta_init : array_like
        Nonnegative starting point.
    burn_in : int, optional
        Sweeps discarded before recording; defaults to ``n_draws``.
    rng_seed : int
        Seed of the chain.

    Returns
    -------
    PosteriorChain
    """
    if n_draws < 1:
        raise ValueError("need at least one draw")
    burn_in = n_draws if burn_in is None else int(burn_in)
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    beta = _valid_start(model, beta_init)
    seed = child_seed(rng_seed) % (2**32)
    draws, accepted = _sampler.run_sweeps(
        np.ascontiguousarray(model.K),
        np.ascontiguousarray(model.y),
        np.ascontiguousarray(model.omega_a),
        model.delta,
        beta,
        int(n_draws),
        burn_in,
        seed,
    )
    return PosteriorChain(draws, accepted / n_draws, seed=rng_seed, burn_in_len=burn_in)


def posterior_mean(chain: PosteriorChain) -> np.ndarray:
    if chain.draws.shape[0] == 0:
        raise ValueError("empty chain")
    return chain.draws.mean(axis=0)


def nnls_init(y, basis: SplineBasis, bin_edges=None) -> np.ndarray:
    """Nonnegative least-squares spline fit directly to the smeared histogram.

    The design matrix is the response of the unsmeared (identity) kernel on
    the same bins, so the fit ignores smearing.
    """
    if isinstance(y, BinnedCounts):
        bin_edges = y.bin_edges if bin_edges is None else bin_edges
    if bin_edges is None:
        raise ValueError("bin edges are required when y is a plain array")
    counts = _counts_array(y)
    if not counts.any():
        return np.zeros(basis.n_basis)
    ktilde = build_response_matrix(IdentityKernel(), basis, bin_edges).entries
    beta, _ = nnls(ktilde, counts, maxiter=50 * basis.n_basis)
    return beta


def effective_sample_size(draws) -> np.ndarray:
    """Per-coordinate ESS from the initial positive autocorrelation sequence."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    s = x.shape[0]
    x = x - x.mean(axis=0)
    nfft = 1 << (2 * s - 1).bit_length()
    f = np.fft.rfft(x, n=nfft, axis=0)
    acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=0)[:s] / s
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        if acov[0, j] <= 0:
            out[j] = s
            continue
        rho = acov[:, j] / acov[0, j]
        tau = 1.0
        for t in range(1, s - 1, 2):
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            tau += 2 * pair
        out[j] = s / tau
    return out


def write_chain_csv(path, chain: PosteriorChain) -> None:
    p = chain.draws.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["draw_index"] + [f"beta_{j + 1}" for j in range(p)])
        for i, row in enumerate(chain.draws):
            writer.writerow([i] + [repr(float(v)) for v in row])
