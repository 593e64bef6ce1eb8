import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import ORACLE_MODELS, PosteriorOracle
from unfold._random import child_seed
from unfold.fastpath import fast_bc_percentile_band
from unfold.forward_model import GaussianKernel, IdentityKernel, build_response_matrix
from unfold.inference import PosteriorChain, PosteriorModel, sample_posterior
from unfold.simulate import BinnedCounts, GaussianMixtureIntensity, bin_points, sample_true_points, thin_and_smear
from unfold.splines import build_basis
from unfold.uncertainty import (
    BiasCorrectionConfig,
    BootstrapSample,
    IntervalBand,
    PosteriorRefit,
    band_from_sample,
    basic_band,
    bc_percentile_band,
    bias_correct,
    credible_band,
    percentile_band,
    quantiles,
    read_bands_csv,
    stderr_band,
    write_bands_csv,
)

EDGES = np.linspace(0, 4, 9)
W = np.diff(EDGES)
HIST_BASIS = build_basis((0, 4), interior_knots=EDGES[1:-1], order=1)
HIST_K = build_response_matrix(IdentityKernel(), HIST_BASIS, EDGES)


def mle_refit(Y, keys):
    return np.asarray(Y, dtype=float) / W


def constant_refit(value):
    def refit(Y, keys):
        return np.tile(value, (np.atleast_2d(Y).shape[0], 1))

    return refit


def test_config_validation():
    with pytest.raises(ValueError):
        BiasCorrectionConfig(n_bc=-1)
    with pytest.raises(ValueError):
        BiasCorrectionConfig(r_bc=0)
    with pytest.raises(NotImplementedError):
        BiasCorrectionConfig(resample_delta=True)


def test_no_iterations_is_identity():
    beta = np.arange(8.0)
    out = bias_correct(beta, 1.0, HIST_K, np.eye(8), BiasCorrectionConfig(n_bc=0), refit=mle_refit)
    np.testing.assert_array_equal(out, beta)


def test_one_step_follows_bias_definition():
    beta0 = np.array([1.0, 4.0, 0.5, 2.0, 3.0, 0.0, 1.0, 6.0])
    c = np.full(8, 2.5)
    out, path = bias_correct(beta0, 1.0, HIST_K, np.eye(8), BiasCorrectionConfig(n_bc=1), refit=constant_refit(c), return_path=True)
    # bias = mean(refits) - beta0; corrected = beta0 - bias, clipped at zero
    np.testing.assert_allclose(out, np.clip(2 * beta0 - c, 0, None))
    np.testing.assert_array_equal(path[0], beta0)
    assert path.shape == (2, 8)


def test_unbiased_estimator_barely_moves():
    beta0 = np.full(8, 2000.0)
    cfg = BiasCorrectionConfig(n_bc=1, r_bc=50, rng_seed=3)
    out = bias_correct(beta0, 1.0, HIST_K, np.eye(8), cfg, refit=mle_refit)
    se = np.sqrt(beta0 / W / cfg.r_bc)
    assert np.all(np.abs(out - beta0) < 3 * se)


def test_posterior_mean_bias_is_removed():
    # at delta -> 0 the refit is (y + 1) / w, so the estimated bias is 1 / w
    beta0 = np.full(8, 400.0)
    cfg = BiasCorrectionConfig(n_bc=1, r_bc=40, n_samples=2000, rng_seed=5)
    refit = PosteriorRefit.from_response(HIST_K, np.eye(8), 1e-12, cfg.n_samples, rng_seed=cfg.rng_seed)
    out = bias_correct(beta0, 1e-12, HIST_K, np.eye(8), cfg, refit=refit)
    se = np.sqrt(beta0 / W / cfg.r_bc)
    assert np.all(np.abs(out - (beta0 - 1 / W)) < 3 * se + 0.1)


def test_negative_start_rejected():
    with pytest.raises(ValueError):
        bias_correct(-np.ones(8), 1.0, HIST_K, np.eye(8), BiasCorrectionConfig(n_bc=1), refit=mle_refit)


def test_degenerate_resamples_give_zero_width():
    c = np.linspace(1, 8, 8)
    y = BinnedCounts(np.full(8, 10), EDGES)
    band = bc_percentile_band(y, 1.0, HIST_K, np.eye(8), HIST_BASIS, BiasCorrectionConfig(n_bc=2), r_uq=20, refit=constant_refit(c))
    np.testing.assert_allclose(band.width, 0)
    np.testing.assert_allclose(band.lower, HIST_BASIS(band.grid) @ c)
    for fn in (stderr_band, basic_band):
        assert np.allclose(fn(y, 1.0, HIST_K, np.eye(8), HIST_BASIS, BiasCorrectionConfig(n_bc=1), r_uq=20, refit=constant_refit(c)).width, 0)


def test_guards():
    y = BinnedCounts(np.full(8, 10), EDGES)
    with pytest.raises(ValueError, match="R_UQ"):
        percentile_band(y, 1.0, HIST_K, np.eye(8), HIST_BASIS, BiasCorrectionConfig(), r_uq=19, refit=mle_refit)
    with pytest.raises(ValueError, match="alpha"):
        percentile_band(y, 1.0, HIST_K, np.eye(8), HIST_BASIS, BiasCorrectionConfig(), alpha=0.5, refit=mle_refit)


def test_refit_failure_names_replicate():
    refit = PosteriorRefit(np.ones((8, 8)), np.eye(8), 1.0, 10)
    with pytest.raises(RuntimeError, match=r"replicate key \(3, 7\)"):
        refit(np.ones((1, 7)), [(3, 7)])


def _synthetic_sample(rng, r=400, shift=0.0):
    obs = np.abs(rng.normal(5, 0.1, (1, 8)))
    res = np.abs(obs + shift + rng.normal(0, 1, (r, 1, 8)))
    return BootstrapSample(np.vstack([obs, obs + shift]), np.concatenate([res, res - shift], axis=1))


def test_basic_equals_percentile_for_symmetric_sample():
    rng = np.random.default_rng(0)
    obs = np.full((1, 8), 10.0)
    half = rng.normal(0, 1, (100, 1, 8))
    res = np.concatenate([obs + half, obs - half])
    sample = BootstrapSample(obs, res)
    pct = band_from_sample(sample, HIST_BASIS, "percentile")
    basic = band_from_sample(sample, HIST_BASIS, "basic")
    np.testing.assert_allclose(basic.lower, pct.lower, atol=1e-12)
    np.testing.assert_allclose(basic.upper, pct.upper, atol=1e-12)


def test_stderr_multiplier_and_gaussian_agreement():
    assert stats.norm.ppf(1 - 0.025) == pytest.approx(1.959964, abs=1e-6)
    rng = np.random.default_rng(1)
    obs = np.full((1, 8), 50.0)
    sample = BootstrapSample(obs, obs + rng.normal(0, 2, (20000, 1, 8)))
    se = band_from_sample(sample, HIST_BASIS, "stderr", n_bc=0)
    pct = band_from_sample(sample, HIST_BASIS, "percentile")
    tol = 0.1 * pct.width
    assert np.all(np.abs(se.lower - pct.lower) < tol) and np.all(np.abs(se.upper - pct.upper) < tol)
    half = 0.5 * se.width
    sd = HIST_BASIS(se.grid) @ sample.resampled[:, 0].std(axis=0, ddof=1)
    np.testing.assert_allclose(half, 1.959964 * sd, rtol=1e-6)


@given(st.floats(0.001, 0.2), st.floats(0.001, 0.2), st.integers(0, 10**6))
@settings(max_examples=40, deadline=None)
def test_band_nesting(a1, a2, seed):
    a1, a2 = sorted((a1, a2))
    sample = _synthetic_sample(np.random.default_rng(seed), shift=0.3)
    for method in ("bc_percentile", "percentile", "basic", "stderr"):
        wide = band_from_sample(sample, HIST_BASIS, method, a1)
        narrow = band_from_sample(sample, HIST_BASIS, method, a2)
        assert np.all(wide.lower <= narrow.lower + 1e-12) and np.all(narrow.upper <= wide.upper + 1e-12)
        if method in ("bc_percentile", "percentile"):
            assert np.all(wide.lower >= 0)


def test_quantile_rule():
    x = np.arange(1.0, 40.0)
    lo, hi = quantiles(x, [0.025, 0.975])
    assert lo == 1.0 and hi == 39.0
    assert quantiles(np.arange(1.0, 200.0), [0.025])[0] == pytest.approx(5.0)


def test_band_validation():
    g = np.linspace(0, 1, 3)
    with pytest.raises(ValueError):
        IntervalBand(g, [1, 2, 3], [0, 2, 3], g, g, "percentile")
    with pytest.raises(ValueError):
        IntervalBand(g, g, g, g, g, "bogus")
    band = IntervalBand(g, [0, 0, 0], [1, 1, 1], g, g, "basic")
    np.testing.assert_array_equal(band.covers([0.5, 1.0, 1.5]), [True, True, False])


def test_credible_band():
    chain = PosteriorChain(np.tile(np.arange(1.0, 9.0), (30, 1)), np.ones(8))
    band = credible_band(chain, HIST_BASIS)
    np.testing.assert_allclose(band.width, 0)
    with pytest.raises(ValueError):
        credible_band(PosteriorChain(np.empty((0, 8)), np.ones(8)), HIST_BASIS)
    _, K, y, om, d = ORACLE_MODELS[1]
    oracle = PosteriorOracle(K, y, om, d)
    chain = sample_posterior(PosteriorModel(np.array(K), y, np.array(om), d), 40000, [1.0], rng_seed=8)
    band = credible_band(chain, build_basis((0, 1), 0, 1), grid=[0.5])
    batches = chain.draws[:, 0].reshape(40, -1)
    for q, got in ((0.025, band.lower[0]), (0.975, band.upper[0])):
        se = np.std(np.quantile(batches, q, axis=1), ddof=1) / np.sqrt(40)
        assert abs(got - oracle.quantile([1.0], q)) < 3 * se


@pytest.fixture(scope="module")
def small_gmm(gmm_basis, gmm_edges, gmm_response, gmm_omega_a):
    truth = GaussianMixtureIntensity(10000.0)
    y = bin_points(thin_and_smear(sample_true_points(truth, 41), GaussianKernel(1.0), (-7, 7), 42), gmm_edges)
    return y, truth


def test_percentile_is_bc_with_zero_iterations(small_gmm, gmm_basis, gmm_response, gmm_omega_a):
    y, _ = small_gmm
    cfg = BiasCorrectionConfig(n_bc=0, r_bc=2, n_samples=30, rng_seed=2)
    a = percentile_band(y, 1e-6, gmm_response, gmm_omega_a, gmm_basis, cfg, r_uq=20)
    b = bc_percentile_band(y, 1e-6, gmm_response, gmm_omega_a, gmm_basis, cfg, r_uq=20)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert a.method == "percentile" and b.method == "bc_percentile"


def test_bands_independent_of_workers(small_gmm, gmm_basis, gmm_response, gmm_omega_a):
    y, _ = small_gmm
    cfg = BiasCorrectionConfig(n_bc=1, r_bc=2, n_samples=30, rng_seed=4)
    bands = []
    for workers in (1, 2):
        refit = PosteriorRefit.from_response(gmm_response, gmm_omega_a, 1e-6, 30, rng_seed=4, workers=workers)
        bands.append(bc_percentile_band(y, 1e-6, gmm_response, gmm_omega_a, gmm_basis, cfg, r_uq=20, refit=refit))
    np.testing.assert_array_equal(bands[0].lower, bands[1].lower)
    np.testing.assert_array_equal(bands[0].upper, bands[1].upper)


def test_full_path_band_properties(small_gmm, gmm_basis, gmm_response, gmm_omega_a):
    y, truth = small_gmm
    cfg = BiasCorrectionConfig(n_bc=1, r_bc=3, n_samples=100, rng_seed=6)
    band = bc_percentile_band(y, 1e-6, gmm_response, gmm_omega_a, gmm_basis, cfg, r_uq=25)
    assert band.grid.size == 200 and np.all(band.lower >= 0) and np.all(band.lower <= band.upper)
    assert np.all(band.lower <= np.maximum(band.bc_point, band.upper))


def test_medium_gmm_band_covers_and_inflates(gmm_basis, gmm_edges, gmm_response, gmm_omega_a):
    truth = GaussianMixtureIntensity(10000.0)
    grid = np.linspace(-7, 7, 200)
    f = truth(grid)
    good, widths_bc, widths_pct = 0, [], []
    for seed in range(20):
        pts = sample_true_points(truth, child_seed(seed, 0))
        y = bin_points(thin_and_smear(pts, GaussianKernel(1.0), (-7, 7), child_seed(seed, 1)), gmm_edges)
        cfg = BiasCorrectionConfig(n_bc=5, r_bc=10, rng_seed=child_seed(seed, 2))
        bc = fast_bc_percentile_band(y, 8.3e-7, gmm_response, gmm_omega_a, gmm_basis, cfg, 200, 0.025, grid)
        pct = fast_bc_percentile_band(y, 8.3e-7, gmm_response, gmm_omega_a, gmm_basis, cfg, 200, 0.025, grid, method="percentile")
        good += bc.covers(f).mean() >= 0.9
        widths_bc.append(bc.width.mean())
        widths_pct.append(pct.width.mean())
    assert good > 10
    assert np.mean(widths_bc) > np.mean(widths_pct)


def test_bands_csv_roundtrip(tmp_path):
    g = np.linspace(0, 1, 4)
    bands = [
        IntervalBand(g, g, g + 1, g + 0.5, g + 0.25, "bc_percentile", 0.025),
        IntervalBand(g, g - 1, g, g - 0.5, g - 0.5, "basic", 0.05),
    ]
    write_bands_csv(tmp_path / "b.csv", bands)
    back = read_bands_csv(tmp_path / "b.csv")
    assert [b.method for b in back] == ["bc_percentile", "basic"]
    for a, b in zip(bands, back):
        for name in ("grid", "lower", "upper", "point", "bc_point"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert a.alpha == b.alpha
