import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from unfold.forward_model import (
    CrystalBallKernel,
    Efficiency,
    GaussianKernel,
    IdentityKernel,
    QuadratureWarning,
    ResponseMatrix,
    TabulatedKernel,
    build_response_matrix,
    kernel_density,
    read_kernel_csv,
    read_matrix_csv,
    smeared_mean,
    write_kernel_csv,
    write_matrix_csv,
)
from unfold.simulate import GaussianMixtureIntensity, sample_true_points, thin_and_smear
from unfold.splines import build_basis, project_function

CB = CrystalBallKernel(0.56, 1.01, 1.95, 1.40)


def test_gaussian_density():
    k = GaussianKernel(1.0)
    assert kernel_density(k, 0.3, 0.3) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)
    t = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(kernel_density(k, t, 0.5), stats.norm.pdf(t - 0.5), rtol=1e-13)


@pytest.mark.parametrize("kw", [dict(sigma=0), dict(alpha=0), dict(gamma=1.0)])
def test_crystal_ball_rejects_bad_parameters(kw):
    base = dict(delta_m=0.0, sigma=1.0, alpha=1.0, gamma=2.0)
    base.update(kw)
    with pytest.raises(ValueError):
        CrystalBallKernel(**base)
    with pytest.raises(ValueError):
        GaussianKernel(-1.0)


def test_crystal_ball_branch_continuity():
    x0 = CB.delta_m - CB.alpha * CB.sigma
    expected = CB.norm * math.exp(-0.5 * CB.alpha**2)
    assert CB.pdf(x0) == pytest.approx(expected, rel=1e-14)
    eps = 1e-9
    assert CB.pdf(x0 - eps) == pytest.approx(CB.pdf(x0 + eps), rel=1e-7)
    # literal textbook tail formula at the branch point
    a, g = CB.alpha, CB.gamma
    z = -a
    literal = CB.norm * (g / a) ** g * math.exp(-0.5 * a * a) * (g / a - a - z) ** (-g)
    assert literal == pytest.approx(expected, rel=1e-13)


def test_crystal_ball_normalization():
    # the gamma = 1.4 tail is heavy: most of the missing mass sits below -50 sigma
    whole = integrate.quad(CB.pdf, -np.inf, CB.delta_m - CB.alpha * CB.sigma)[0]
    whole += integrate.quad(CB.pdf, CB.delta_m - CB.alpha * CB.sigma, np.inf)[0]
    assert whole == pytest.approx(1.0, abs=1e-6)
    lo, hi = -50 * CB.sigma, 50 * CB.sigma
    window = integrate.quad(CB.pdf, lo, hi, points=[CB.delta_m - CB.alpha * CB.sigma], limit=200)[0]
    assert window == pytest.approx(float(CB.cdf(hi) - CB.cdf(lo)), abs=1e-8)
    narrow_tail = CrystalBallKernel(0.56, 1.01, 1.95, 6.0)
    window = integrate.quad(narrow_tail.pdf, lo, hi, points=[0.56 - 1.95 * 1.01], limit=200)[0]
    assert window == pytest.approx(1.0, abs=1e-4)


@given(
    st.floats(-1, 1), st.floats(0.1, 3), st.floats(0.2, 4), st.floats(1.05, 30), st.floats(1e-6, 1 - 1e-6)
)
@settings(max_examples=100, deadline=None)
def test_crystal_ball_cdf_ppf_roundtrip(dm, sigma, alpha, gamma, u):
    k = CrystalBallKernel(dm, sigma, alpha, gamma)
    assert float(k.cdf(k.ppf(u))) == pytest.approx(u, rel=1e-8, abs=1e-12)


def test_crystal_ball_tail_log_convex():
    x = np.linspace(CB.delta_m - 40, CB.delta_m - CB.alpha * CB.sigma, 400)
    logp = np.log(CB.pdf(x))
    assert np.all(np.diff(logp, 2) >= -1e-12)


def test_translation_kernels():
    for k in (GaussianKernel(0.7), CB):
        assert kernel_density(k, 3.0, 1.0) == pytest.approx(kernel_density(k, 2.0, 0.0))


def test_efficiency():
    assert np.all(Efficiency()(np.array([0.0, 1.0])) == 1)
    assert np.all(Efficiency.constant(0.4)(np.zeros(3)) == 0.4)
    with pytest.raises(ValueError):
        Efficiency.constant(1.2)
    with pytest.raises(ValueError):
        Efficiency(lambda s: 2 * np.ones_like(s))(np.zeros(2))


def test_gmm_condition_number(gmm_response):
    assert gmm_response.shape == (40, 30)
    assert gmm_response.converged
    assert 2.6e8 / 3 < gmm_response.condition_number < 2.6e8 * 3
    assert np.all(gmm_response.entries >= 0)


def test_identity_response_is_diagonal():
    edges = np.linspace(0, 2, 9)
    basis = build_basis((0, 2), interior_knots=edges[1:-1], order=1)
    k = build_response_matrix(IdentityKernel(), basis, edges)
    np.testing.assert_allclose(k.entries, np.diag(np.diff(edges)), atol=1e-14)
    beta = np.arange(8.0)
    np.testing.assert_allclose(smeared_mean(k, beta), 0.25 * beta)
    assert np.all(smeared_mean(k, np.zeros(8)) == 0)
    with pytest.raises(ValueError):
        smeared_mean(k, np.ones(7))


def test_identity_row_sums_reproduce_integral():
    basis = build_basis((0, 3), 4, 4)
    k = build_response_matrix(IdentityKernel(), basis, np.linspace(-1, 4, 11))
    beta = np.random.default_rng(3).uniform(0, 5, basis.n_basis)
    assert k.entries.sum(axis=0) @ beta == pytest.approx(basis.integrals() @ beta, rel=1e-12)


def test_mass_conservation(gmm_basis):
    k = build_response_matrix(GaussianKernel(1.0), gmm_basis, np.linspace(-15, 15, 61))
    np.testing.assert_allclose(k.entries.sum(axis=0), gmm_basis.integrals(), rtol=1e-4)


def test_refinement_is_stable(gmm_basis, gmm_edges, gmm_response):
    finer = build_response_matrix(GaussianKernel(1.0), gmm_basis, gmm_edges, n_nodes=2 * gmm_response.n_nodes)
    scale = np.abs(gmm_response.entries).max()
    assert np.all(np.abs(finer.entries - gmm_response.entries) <= 1e-8 * np.abs(finer.entries) + 1e-14 * scale)


def test_quadrature_warning(gmm_basis, gmm_edges):
    with pytest.warns(QuadratureWarning):
        k = build_response_matrix(GaussianKernel(0.01), gmm_basis, gmm_edges, n_nodes=1, max_nodes=2)
    assert not k.converged


def test_smeared_total_against_monte_carlo(gmm_basis, gmm_response):
    truth = GaussianMixtureIntensity(1e6)
    beta = project_function(gmm_basis, truth)
    total = smeared_mean(gmm_response, np.clip(beta, 0, None)).sum()
    pts = sample_true_points(truth, 7)
    n_obs = thin_and_smear(pts, GaussianKernel(1.0), (-7, 7), 8).size
    expected_fraction = n_obs / pts.size
    se = math.sqrt(expected_fraction * (1 - expected_fraction) / pts.size)
    assert abs(total / truth.total() - expected_fraction) < 5 * se + 2e-4


def test_tabulated_kernel_matches_gaussian():
    basis = build_basis((-3, 3), 4, 4)
    edges = np.linspace(-3, 3, 7)
    t = np.linspace(-9, 9, 721)
    s = np.linspace(-3, 3, 241)
    tab = TabulatedKernel(t, s, stats.norm.pdf(t[:, None] - s[None, :]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureWarning)
        k_tab = build_response_matrix(tab, basis, edges, max_nodes=8)
    k_ref = build_response_matrix(GaussianKernel(1.0), basis, edges)
    np.testing.assert_allclose(k_tab.entries, k_ref.entries, atol=2e-3 * k_ref.entries.max())


def test_csv_roundtrips(tmp_path, gmm_response):
    write_matrix_csv(tmp_path / "k.csv", gmm_response)
    np.testing.assert_array_equal(read_matrix_csv(tmp_path / "k.csv"), gmm_response.entries)
    t, s = np.linspace(0, 1, 4), np.linspace(0, 1, 3)
    v = np.arange(12.0).reshape(4, 3)
    write_kernel_csv(tmp_path / "kern.csv", t, s, v)
    back = read_kernel_csv(tmp_path / "kern.csv")
    np.testing.assert_array_equal(back.values, v)
    lines = (tmp_path / "kern.csv").read_text().splitlines()
    (tmp_path / "bad.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ValueError, match="rectangular"):
        read_kernel_csv(tmp_path / "bad.csv")


def test_response_validation(gmm_basis):
    with pytest.raises(ValueError):
        ResponseMatrix(-np.ones((2, 2)), [0, 1, 2])
    with pytest.raises(ValueError):
        ResponseMatrix(np.ones((2, 2)), [0, 1])
    with pytest.raises(ValueError):
        build_response_matrix(GaussianKernel(1.0), gmm_basis, [0, 0, 1])
