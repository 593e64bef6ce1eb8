import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from unfold.splines import (
    aristotelian_matrix,
    build_basis,
    curvature_matrix,
    eval_basis,
    eval_intensity,
    project_function,
)


def cox_de_boor(knots, order, s):
    """Direct recursion over lower orders; independent of scipy."""
    t = np.asarray(knots, dtype=float)
    n = len(t) - 1
    last = np.max(np.nonzero(t[1:] > t[:-1])[0])
    b = np.zeros(n)
    for i in range(n):
        if t[i] <= s < t[i + 1] or (i == last and s == t[-1]):
            b[i] = 1.0
    for k in range(2, order + 1):
        nxt = np.zeros(n - k + 1)
        for i in range(n - k + 1):
            left = 0.0 if t[i + k - 1] == t[i] else (s - t[i]) / (t[i + k - 1] - t[i]) * b[i]
            right = 0.0 if t[i + k] == t[i + 1] else (t[i + k] - s) / (t[i + k] - t[i + 1]) * b[i + 1]
            nxt[i] = left + right
        b = nxt
    return b


def test_basis_sizes():
    assert build_basis((-7, 7), 26, 4).n_basis == 30
    assert build_basis((81.5, 98.5), 34, 4).n_basis == 38
    b = build_basis((0, 1), 0, 1)
    assert b.n_basis == 1
    np.testing.assert_array_equal(eval_basis(b, [0.0, 0.3, 1.0]), np.ones((3, 1)))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(interior_knots=[0.5, 0.2]),
        dict(interior_knots=[0.0, 0.5]),
        dict(interior_knots=[0.5, 1.2]),
        dict(n_interior=-1),
    ],
)
def test_bad_knots(kwargs):
    with pytest.raises(ValueError):
        build_basis((0, 1), order=4, **kwargs)


def test_eval_outside_domain(gmm_basis):
    with pytest.raises(ValueError, match="outside"):
        eval_basis(gmm_basis, 7.5)


def test_boundary_interpolation(gmm_basis):
    v = eval_basis(gmm_basis, -7.0)
    assert v[0] == 1.0 and np.all(v[1:] == 0)
    v = eval_basis(gmm_basis, 7.0)
    assert v[-1] == 1.0 and np.all(v[:-1] == 0)


def test_matches_cox_de_boor_at_knots(gmm_basis):
    pts = np.r_[gmm_basis.breakpoints, gmm_basis.breakpoints[:-1] + 0.137]
    for s in pts:
        np.testing.assert_allclose(eval_basis(gmm_basis, s), cox_de_boor(gmm_basis.knots, 4, s), atol=1e-13)


def test_partition_and_support(gmm_basis):
    s = np.random.default_rng(0).uniform(-7, 7, 1000)
    v = eval_basis(gmm_basis, s)
    assert np.all(v >= 0)
    assert np.abs(v.sum(axis=1) - 1).max() < 1e-10
    assert (v > 0).sum(axis=1).max() <= 4


@given(st.floats(-7, 7), st.integers(0, 12), st.integers(1, 5))
@settings(max_examples=200, deadline=None)
def test_partition_property(s, n_interior, order):
    b = build_basis((-7, 7), n_interior, order)
    v = eval_basis(b, s)
    assert abs(v.sum() - 1) < 1e-12
    assert np.count_nonzero(v) <= order
    assert np.all(v >= 0)


def test_eval_intensity(gmm_basis):
    grid = np.linspace(-7, 7, 101)
    assert np.all(eval_intensity(gmm_basis, np.zeros(30), grid) == 0)
    np.testing.assert_allclose(eval_intensity(gmm_basis, np.full(30, 3.5), grid), 3.5, rtol=1e-12)
    beta = np.random.default_rng(1).uniform(0, 10, 30)
    direct = np.array([sum(beta[j] * eval_basis(gmm_basis, s)[j] for j in range(30)) for s in grid])
    np.testing.assert_allclose(eval_intensity(gmm_basis, beta, grid), direct, rtol=1e-12)
    with pytest.raises(ValueError, match="does not match"):
        eval_intensity(gmm_basis, np.ones(29), grid)
    with pytest.raises(ValueError, match="nonnegative"):
        eval_intensity(gmm_basis, -beta, grid)


def test_curvature_affine_nullspace(gmm_basis):
    omega = curvature_matrix(gmm_basis)
    for f in (lambda s: np.ones_like(s), lambda s: s, lambda s: 2.0 - 0.3 * s):
        beta = project_function(gmm_basis, f)
        assert omega.quadratic_form(beta) < 1e-10 * beta @ beta


def test_curvature_rank(gmm_basis):
    assert curvature_matrix(gmm_basis).rank() == 28
    z = build_basis((81.5, 98.5), 34, 4)
    assert curvature_matrix(z).rank() == 36


def test_curvature_toy_against_quad():
    b = build_basis((0, 1), 0, 3)
    omega = curvature_matrix(b).entries

    def d2(s):
        return b.derivative_matrix(s, 2)[0]

    ref = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            ref[i, j] = integrate.quad(lambda s: d2(s)[i] * d2(s)[j], 0, 1, epsabs=1e-13)[0]
    np.testing.assert_allclose(omega, ref, atol=1e-10)
    np.testing.assert_allclose(omega, 4 * np.array([[1, -2, 1], [-2, 4, -2], [1, -2, 1]]), atol=1e-10)


def test_curvature_needs_order_three():
    with pytest.raises(ValueError, match="order 3"):
        curvature_matrix(build_basis((0, 1), 2, 2))


def test_aristotelian(gmm_basis):
    omega = curvature_matrix(gmm_basis)
    oa = aristotelian_matrix(omega, 5, 5)
    diff = oa.entries - omega.entries
    assert diff[0, 0] == pytest.approx(5) and diff[-1, -1] == pytest.approx(5)
    diff[0, 0] = diff[-1, -1] = 0
    assert np.all(diff == 0)
    assert oa.is_positive_definite() and not omega.is_positive_definite()
    z = curvature_matrix(build_basis((81.5, 98.5), 34, 4))
    assert np.linalg.eigvalsh(aristotelian_matrix(z, 50, 50).entries).min() > 0
    same = aristotelian_matrix(omega, 0, 0)
    np.testing.assert_array_equal(same.entries, omega.entries)
    with pytest.raises(ValueError):
        aristotelian_matrix(omega, -1, 5)
    with pytest.raises(ValueError):
        aristotelian_matrix(oa, 1, 1)


@given(st.floats(0.01, 1e3), st.floats(0.01, 1e3))
@settings(max_examples=30, deadline=None)
def test_aristotelian_positive_definite(gl, gr):
    b = build_basis((0, 5), 6, 4)
    assert aristotelian_matrix(curvature_matrix(b), gl, gr).is_positive_definite()
