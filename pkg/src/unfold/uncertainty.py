"""Iterative bootstrap bias correction and pointwise intensity bands.

Random streams are keyed by integer tuples under one root seed:

* ``(0, r)``            outer resample ``r`` (``r = 0`` is the observed data)
* ``(1, r, i)``         the ``R_BC`` datasets drawn at bias-correction step ``i``
* ``(2, r, i, j)``      the chain refitting dataset ``j`` of that step
* ``(3, r)``            the chain refitting outer resample ``r``

Because every draw is addressed by its key, the bands do not depend on the
order in which replicates are processed or on how many workers run them.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats
from scipy.optimize import nnls

from ._parallel import pmap
from ._random import child_seed, substream
from .forward_model import IdentityKernel, ResponseMatrix, build_response_matrix
from .inference import PosteriorChain, PosteriorModel, _counts_array, _matrix, _penalty, sample_posterior
from .splines import SplineBasis, eval_basis

logger = logging.getLogger(__name__)

__all__ = [
    "BiasCorrectionConfig",
    "IntervalBand",
    "PosteriorRefit",
    "BootstrapSample",
    "bias_correct",
    "bootstrap_sample",
    "bc_percentile_band",
    "percentile_band",
    "basic_band",
    "stderr_band",
    "credible_band",
    "band_from_sample",
    "default_grid",
    "quantiles",
    "write_bands_csv",
    "read_bands_csv",
]

METHODS = ("bc_percentile", "percentile", "basic", "stderr", "credible")
MIN_R_UQ = 20


@dataclass(frozen=True)
class BiasCorrectionConfig:
    """Settings of the bias-correction loop.

    Attributes
    ----------
    n_bc : int
        Number of bias-correction iterations N_BC (0 disables correction).
    r_bc : int
        Bootstrap datasets per iteration R_BC.
    n_samples : int
        Recorded MCMC draws per refit.
    burn_in : int, optional
        Burn-in per refit; defaults to ``n_samples``.
    rng_seed : int
        Root seed of all bootstrap streams.
    resample_delta : bool
        Must be False: the prior scale is held at its estimate.
    """

    n_bc: int = 5
    r_bc: int = 10
    n_samples: int = 1000
    burn_in: int | None = None
    rng_seed: int = 0
    resample_delta: bool = False

    def __post_init__(self):
        if self.n_bc < 0:
            raise ValueError("n_bc must be nonnegative")
        if self.r_bc < 1:
            raise ValueError("r_bc must be at least 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.resample_delta:
            raise NotImplementedError("bootstrap resampling of delta is not supported; delta stays fixed")


@dataclass(frozen=True)
class IntervalBand:
    """Pointwise lower/upper bounds on an evaluation grid."""

    grid: np.ndarray = field(repr=False)
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    point: np.ndarray = field(repr=False)
    bc_point: np.ndarray = field(repr=False)
    method: str = "bc_percentile"
    alpha: float = 0.025

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown band method {self.method!r}")
        arrays = {}
        for name in ("grid", "lower", "upper", "point", "bc_point"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        shapes = {a.shape for a in arrays.values()}
        if len(shapes) != 1 or arrays["grid"].ndim != 1:
            raise ValueError("band arrays must be 1-D and of equal length")
        if np.any(arrays["lower"] > arrays["upper"]):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def covers(self, truth) -> np.ndarray:
        """Boolean mask of grid points where ``lower <= truth <= upper``."""
        t = np.asarray(truth, dtype=float)
        return (self.lower <= t) & (t <= self.upper)


def default_grid(basis_or_domain, size: int = 200) -> np.ndarray:
    lo, hi = basis_or_domain.domain if isinstance(basis_or_domain, SplineBasis) else basis_or_domain
    return np.linspace(lo, hi, size)


def quantiles(samples, levels) -> np.ndarray:
    """Order-statistic quantiles at positions ``level * (R + 1)``, clamped to the extremes."""
    return np.quantile(np.asarray(samples, dtype=float), levels, axis=0, method="weibull")


def _check_alpha(alpha):
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")


def _identity_design(K) -> np.ndarray | None:
    if isinstance(K, ResponseMatrix) and K.basis is not None:
        return build_response_matrix(IdentityKernel(), K.basis, K.bin_edges).entries
    return None


@dataclass(frozen=True)
class PosteriorRefit:
    """Posterior-mean estimator at a fixed prior scale.

    Calling it with a stack of datasets ``Y`` (``R x n``) and one key per row
    returns the ``R x p`` stack of posterior means. Each chain starts from
    the nonnegative least-squares spline fit to its own dataset when the
    identity-kernel design is available, else from a flat positive vector.
    """

    K: np.ndarray = field(repr=False)
    omega_a: np.ndarray = field(repr=False)
    delta: float
    n_samples: int = 1000
    burn_in: int | None = None
    rng_seed: int = 0
    init_design: np.ndarray | None = field(default=None, repr=False)
    workers: int = 1

    @classmethod
    def from_response(cls, K, omega_a, delta, n_samples=1000, burn_in=None, rng_seed=0, workers=1):
        return cls(
            _matrix(K),
            _penalty(omega_a),
            float(delta),
            n_samples,
            burn_in,
            rng_seed,
            _identity_design(K),
            workers,
        )

    def start(self, y) -> np.ndarray:
        if not np.any(y):
            return np.zeros(self.K.shape[1])
        if self.init_design is not None:
            return nnls(self.init_design, y, maxiter=50 * self.K.shape[1])[0]
        return np.full(self.K.shape[1], y.sum() / self.K.sum())

    def fit_one(self, item):
        y, key = item
        try:
            model = PosteriorModel(self.K, y, self.omega_a, self.delta)
            chain = sample_posterior(
                model,
                self.n_samples,
                self.start(y),
                burn_in=self.burn_in,
                rng_seed=child_seed(self.rng_seed, *key),
            )
        except Exception as exc:
            raise RuntimeError(f"refit for replicate key {tuple(key)} failed: {exc}") from exc
        return chain.draws.mean(axis=0)

    def __call__(self, Y, keys) -> np.ndarray:
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = pmap(self.fit_one, list(zip(Y, keys)), self.workers)
        return np.array(out).reshape(Y.shape[0], self.K.shape[1])


def _default_refit(K, omega_a, delta_hat, cfg: BiasCorrectionConfig):
    return PosteriorRefit.from_response(K, omega_a, delta_hat, cfg.n_samples, cfg.burn_in, cfg.rng_seed)


def _bc_paths(beta0, refit, K, cfg: BiasCorrectionConfig, rows) -> np.ndarray:
    """All bias-correction iterates for several starting estimates at once.

    ``beta0`` is ``(R, p)`` and ``rows`` gives the outer-replicate index of
    each row. Returns ``(R, n_bc + 1, p)`` with ``[:, 0] == beta0``.
    """
    K = _matrix(K)
    R, p = beta0.shape
    path = np.empty((R, cfg.n_bc + 1, p))
    path[:, 0] = beta0
    current = beta0
    for i in range(cfg.n_bc):
        mu = current @ K.T
        Y = np.concatenate([substream(cfg.rng_seed, 1, r, i).poisson(mu[k], size=(cfg.r_bc, mu.shape[1])) for k, r in enumerate(rows)])
        keys = [(2, r, i, j) for r in rows for j in range(cfg.r_bc)]
        refits = refit(Y.astype(float), keys).reshape(R, cfg.r_bc, p)
        bias = refits.mean(axis=1) - current
        current = np.clip(beta0 - bias, 0.0, None)
        path[:, i + 1] = current
        logger.debug("bias-correction iteration %d done for %d replicates", i + 1, R)
    return path


def bias_correct(beta_hat0, delta_hat, K, omega_a, cfg: BiasCorrectionConfig, *, refit=None, return_path=False, replicate=0):
    """Iterative bootstrap bias correction of ``beta_hat0``.

    Each iteration draws ``r_bc`` datasets from ``Poisson(K beta_i)``,
    refits them at the fixed ``delta_hat``, estimates the bias as the mean
    refit minus ``beta_i`` and sets ``beta_{i+1} = max(beta_hat0 - bias, 0)``.

    Parameters
    ----------
    beta_hat0 : array_like
        Uncorrected estimate.
    delta_hat : float
        Prior scale held fixed for every refit.
    K, omega_a
        Response and boundary-augmented penalty.
    cfg : BiasCorrectionConfig
    refit : callable, optional
        ``refit(Y, keys) -> betas``; defaults to the posterior mean.
    return_path : bool
        Also return every iterate, shape ``(n_bc + 1, p)``.
    replicate : int
        Outer-replicate index selecting the random streams.

    Returns
    -------
    ndarray or (ndarray, ndarray)
    """
    beta0 = np.asarray(beta_hat0, dtype=float)
    if np.any(beta0 < 0):
        raise ValueError("beta_hat0 must be nonnegative")
    refit = refit or _default_refit(K, omega_a, delta_hat, cfg)
    path = _bc_paths(beta0[None, :], refit, K, cfg, [replicate])[0]
    return (path[-1], path) if return_path else path[-1]


@dataclass(frozen=True)
class BootstrapSample:
    """Bias-correction paths of the observed data and of every outer resample.

    ``observed`` has shape ``(n_bc + 1, p)``; ``resampled`` has shape
    ``(R_UQ, n_bc + 1, p)``. Slicing level ``k`` gives what an ``N_BC = k``
    run with the same seeds would produce.
    """

    observed: np.ndarray = field(repr=False)
    resampled: np.ndarray = field(repr=False)
    scheme: str = "data"

    @property
    def n_bc(self) -> int:
        return self.observed.shape[0] - 1


def bootstrap_sample(y, beta_hat, K, cfg: BiasCorrectionConfig, r_uq: int, refit, scheme: str = "data") -> BootstrapSample:
    """Outer bootstrap with the full bias-correction path for every resample.

    ``scheme='data'`` resamples ``Poisson(y)``; ``scheme='model'`` resamples
    ``Poisson(K beta_hat)``.
    """
    if r_uq < MIN_R_UQ:
        raise ValueError(f"R_UQ must be at least {MIN_R_UQ} for meaningful quantiles, got {r_uq}")
    y = _counts_array(y)
    beta_hat = np.asarray(beta_hat, dtype=float)
    if scheme == "data":
        mean = y
    elif scheme == "model":
        mean = beta_hat @ _matrix(K).T
    else:
        raise ValueError(f"unknown resampling scheme {scheme!r}")
    Y = np.stack([substream(cfg.rng_seed, 0, r).poisson(mean) for r in range(1, r_uq + 1)]).astype(float)
    boot = refit(Y, [(3, r) for r in range(1, r_uq + 1)])
    starts = np.vstack([beta_hat[None, :], boot])
    paths = _bc_paths(starts, refit, K, cfg, list(range(r_uq + 1)))
    return BootstrapSample(paths[0], paths[1:], scheme)


def _grid_values(basis, betas, grid):
    design = eval_basis(basis, grid)
    return np.asarray(betas) @ design.T


def band_from_sample(sample: BootstrapSample, basis: SplineBasis, method: str, alpha: float = 0.025, grid=None, n_bc=None) -> IntervalBand:
    """Build a band of type ``method`` from a precomputed bootstrap sample.

    ``n_bc`` selects the bias-correction level (default: the deepest level).
    """
    _check_alpha(alpha)
    grid = default_grid(basis) if grid is None else np.asarray(grid, dtype=float)
    level = sample.n_bc if n_bc is None else int(n_bc)
    if not 0 <= level <= sample.n_bc:
        raise ValueError(f"bias-correction level {level} not in the sample")
    f_hat = _grid_values(basis, sample.observed[0], grid)
    f_bc = _grid_values(basis, sample.observed[level], grid)
    if method in ("bc_percentile", "percentile"):
        if method == "percentile":
            level, f_bc = 0, f_hat
        boot = _grid_values(basis, sample.resampled[:, level], grid)
        lo, hi = quantiles(boot, [alpha, 1 - alpha])
    elif method == "basic":
        boot = _grid_values(basis, sample.resampled[:, 0], grid)
        q_lo, q_hi = quantiles(boot, [alpha, 1 - alpha])
        lo, hi = 2 * f_hat - q_hi, 2 * f_hat - q_lo
        f_bc = f_hat
    elif method == "stderr":
        boot = _grid_values(basis, sample.resampled[:, level], grid)
        half = stats.norm.ppf(1 - alpha) * boot.std(axis=0, ddof=1)
        lo, hi = f_bc - half, f_bc + half
    else:
        raise ValueError(f"method {method!r} is not a bootstrap band")
    return IntervalBand(grid, lo, hi, f_hat, f_bc, method, alpha)


def bc_percentile_band(
    y,
    delta_hat,
    K,
    omega_a,
    basis: SplineBasis,
    cfg: BiasCorrectionConfig,
    r_uq: int = 200,
    alpha: float = 0.025,
    grid=None,
    *,
    refit=None,
    beta_hat=None,
    method: str = "bc_percentile",
) -> IntervalBand:
    """Bias-corrected bootstrap percentile band.

    The observed histogram is resampled ``r_uq`` times from ``Poisson(y)``;
    each resample is refitted and bias corrected, and the band is formed from
    the pointwise ``alpha`` and ``1 - alpha`` quantiles of the corrected
    intensities. ``point`` is the uncorrected estimate of the observed data
    and ``bc_point`` its bias-corrected version.
    """
    _check_alpha(alpha)
    refit = refit or _default_refit(K, omega_a, delta_hat, cfg)
    y_arr = _counts_array(y)
    if beta_hat is None:
        beta_hat = refit(y_arr[None, :], [(3, 0)])[0]
    sample = bootstrap_sample(y_arr, beta_hat, K, cfg, r_uq, refit, "data")
    return band_from_sample(sample, basis, method, alpha, grid)


def percentile_band(y, delta_hat, K, omega_a, basis, cfg, r_uq=200, alpha=0.025, grid=None, *, refit=None, beta_hat=None):
    """Plain bootstrap percentile band: the bias-corrected pipeline with ``n_bc = 0``."""
    cfg0 = replace(cfg, n_bc=0)
    band = bc_percentile_band(y, delta_hat, K, omega_a, basis, cfg0, r_uq, alpha, grid, refit=refit, beta_hat=beta_hat)
    return replace(band, method="percentile")


def basic_band(y, delta_hat, K, omega_a, basis, cfg, r_uq=200, alpha=0.025, grid=None, *, refit=None, beta_hat=None):
    """Basic bootstrap band ``[2 f_hat - q_{1-alpha}, 2 f_hat - q_alpha]``.

    Resamples come from ``Poisson(K beta_hat)``. The lower end is not clipped
    and can be negative.
    """
    _check_alpha(alpha)
    refit = refit or _default_refit(K, omega_a, delta_hat, cfg)
    y_arr = _counts_array(y)
    if beta_hat is None:
        beta_hat = refit(y_arr[None, :], [(3, 0)])[0]
    sample = bootstrap_sample(y_arr, beta_hat, K, replace(cfg, n_bc=0), r_uq, refit, "model")
    return band_from_sample(sample, basis, "basic", alpha, grid)


def stderr_band(y, delta_hat, K, omega_a, basis, cfg, r_uq=200, alpha=0.025, grid=None, *, refit=None, beta_hat=None):
    """``f_BC +- z_{1-alpha} sd*`` from the bias-corrected bootstrap sample."""
    return bc_percentile_band(
        y, delta_hat, K, omega_a, basis, cfg, r_uq, alpha, grid, refit=refit, beta_hat=beta_hat, method="stderr"
    )


def credible_band(chain: PosteriorChain, basis: SplineBasis, alpha: float = 0.025, grid=None) -> IntervalBand:
    """Equal-tailed pointwise credible band from posterior draws."""
    _check_alpha(alpha)
    draws = chain.draws if isinstance(chain, PosteriorChain) else np.atleast_2d(chain)
    if draws.shape[0] == 0:
        raise ValueError("empty chain")
    grid = default_grid(basis) if grid is None else np.asarray(grid, dtype=float)
    values = _grid_values(basis, draws, grid)
    lo, hi = quantiles(values, [alpha, 1 - alpha])
    point = _grid_values(basis, draws.mean(axis=0), grid)
    return IntervalBand(grid, lo, hi, point, point, "credible", alpha)


def write_bands_csv(path, bands) -> None:
    if isinstance(bands, IntervalBand):
        bands = [bands]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "lower", "point", "bc_point", "upper", "method", "alpha"])
        for b in bands:
            for row in zip(b.grid, b.lower, b.point, b.bc_point, b.upper):
                writer.writerow([repr(float(v)) for v in row] + [b.method, repr(float(b.alpha))])


def read_bands_csv(path) -> list[IntervalBand]:
    rows: dict[tuple[str, float], list] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["s", "lower", "point", "bc_point", "upper", "method", "alpha"]
        if reader.fieldnames != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = [float(row[k]) for k in ("s", "lower", "point", "bc_point", "upper")]
                key = (row["method"], float(row["alpha"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {lineno}: malformed band row") from None
            rows.setdefault(key, []).append(vals)
    out = []
    for (method, alpha), vals in rows.items():
        a = np.array(vals)
        out.append(IntervalBand(a[:, 0], a[:, 1], a[:, 4], a[:, 2], a[:, 3], method, alpha))
    return out
