"""B-spline bases on the true space and their roughness penalties.

Bases are clamped: both domain endpoints are repeated ``order`` times in the
knot vector, so the first and last basis functions interpolate the boundary
values of the spline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

__all__ = [
    "SplineBasis",
    "PenaltyMatrix",
    "build_basis",
    "eval_basis",
    "eval_intensity",
    "curvature_matrix",
    "aristotelian_matrix",
    "project_function",
    "gauss_legendre_panels",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SplineBasis:
    """Order-``order`` clamped B-spline system on ``domain``.

    Attributes
    ----------
    domain : tuple of float
        The interval ``(e_min, e_max)``.
    order : int
        Spline order m (polynomial degree m - 1).
    interior_knots : ndarray
        Strictly increasing knots inside the open domain.
    """

    domain: tuple[float, float]
    order: int
    interior_knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        lo, hi = (float(v) for v in self.domain)
        if not hi > lo:
            raise ValueError(f"empty domain {self.domain!r}")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        knots = np.asarray(self.interior_knots, dtype=float).ravel()
        if knots.size and np.any(np.diff(knots) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        if knots.size and (knots[0] <= lo or knots[-1] >= hi):
            raise ValueError("interior knots must lie strictly inside the domain")
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "interior_knots", _frozen(knots))

    @property
    def n_interior(self) -> int:
        return int(self.interior_knots.size)

    @property
    def n_basis(self) -> int:
        return self.n_interior + self.order

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector of length ``n_basis + order``."""
        lo, hi = self.domain
        return np.r_[[lo] * self.order, self.interior_knots, [hi] * self.order]

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knots, i.e. the boundaries of the polynomial pieces."""
        return np.r_[self.domain[0], self.interior_knots, self.domain[1]]

    def __call__(self, s) -> np.ndarray:
        return eval_basis(self, s)

    def integrals(self) -> np.ndarray:
        """Integral of each basis function over the domain."""
        t = self.knots
        m = self.order
        return (t[m:] - t[:-m]) / m

    def derivative_matrix(self, s, nu: int) -> np.ndarray:
        """Matrix of ``nu``-th derivatives of every basis function at ``s``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        spline = BSpline(self.knots, np.eye(self.n_basis), self.degree, extrapolate=False)
        if nu == 0:
            return spline(s)
        return spline.derivative(nu)(s)

    def __eq__(self, other):
        if not isinstance(other, SplineBasis):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.order == other.order
            and np.array_equal(self.interior_knots, other.interior_knots)
        )

    def __hash__(self):
        return hash((self.domain, self.order, self.interior_knots.tobytes()))


@dataclass(frozen=True)
class PenaltyMatrix:
    """Symmetric roughness penalty on spline coefficients.

    ``kind`` is ``"curvature"`` for the integrated squared second derivative
    and ``"aristotelian"`` once boundary terms have been added.
    """

    entries: np.ndarray = field(repr=False)
    kind: str = "curvature"
    gamma_left: float = 0.0
    gamma_right: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"penalty must be square, got shape {a.shape}")
        scale = max(np.abs(a).max(), 1.0)
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("penalty matrix is not symmetric")
        object.__setattr__(self, "entries", _frozen(0.5 * (a + a.T)))

    @property
    def shape(self):
        return self.entries.shape

    def quadratic_form(self, beta) -> np.ndarray:
        """``beta @ entries @ beta``; ``beta`` may be a stack of vectors."""
        beta = np.asarray(beta, dtype=float)
        return np.einsum("...i,ij,...j->...", beta, self.entries, beta)

    def rank(self, rtol: float = 1e-8) -> int:
        sv = np.linalg.svd(self.entries, compute_uv=False)
        return int(np.sum(sv > rtol * sv.max()))

    def is_positive_definite(self) -> bool:
        try:
            np.linalg.cholesky(self.entries)
        except np.linalg.LinAlgError:
            return False
        return True


def build_basis(domain, n_interior: int = 0, order: int = 4, interior_knots=None) -> SplineBasis:
    """Clamped B-spline basis with uniformly spaced interior knots.

    Pass ``interior_knots`` to place the knots explicitly; ``n_interior`` is
    then ignored.

    >>> build_basis((-7, 7), 26, 4).n_basis
    30
    """
    lo, hi = (float(v) for v in domain)
    if interior_knots is None:
        if n_interior < 0:
            raise ValueError("number of interior knots must be nonnegative")
        interior_knots = np.linspace(lo, hi, int(n_interior) + 2)[1:-1]
    return SplineBasis((lo, hi), order, np.asarray(interior_knots, dtype=float))


def eval_basis(basis: SplineBasis, s) -> np.ndarray:
    """Values of all basis functions at ``s``.

    Returns shape ``(p,)`` for scalar ``s`` and ``(len(s), p)`` otherwise.
    """
    scalar = np.ndim(s) == 0
    x = np.atleast_1d(np.asarray(s, dtype=float))
    lo, hi = basis.domain
    if np.any(~np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"evaluation points outside the domain [{lo}, {hi}]")
    values = BSpline.design_matrix(x, basis.knots, basis.degree).toarray()
    return values[0] if scalar else values


def eval_intensity(basis: SplineBasis, beta, grid) -> np.ndarray:
    """Evaluate ``sum_j beta_j B_j`` on ``grid``.

    ``beta`` may also be a stack of coefficient vectors of shape ``(r, p)``,
    in which case the result has shape ``(r, len(grid))``.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != basis.n_basis:
        raise ValueError(
            f"coefficient length {beta.shape[-1]} does not match basis size {basis.n_basis}"
        )
    if np.any(beta < 0):
        raise ValueError("intensity coefficients must be nonnegative")
    design = eval_basis(basis, np.atleast_1d(grid))
    return beta @ design.T


def gauss_legendre_panels(edges, n_nodes: int):
    """Composite Gauss-Legendre nodes and weights over consecutive panels."""
    edges = np.asarray(edges, dtype=float)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = mid[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def curvature_matrix(basis: SplineBasis) -> PenaltyMatrix:
    """Gram matrix of basis second derivatives, ``int B_i'' B_j''``.

    The integrand is a piecewise polynomial of degree ``2 * (m - 3)`` and
    is integrated exactly span by span.
    """
    if basis.order < 3:
        raise ValueError("curvature penalty needs splines of order 3 or more")
    n_nodes = max(1, math.ceil((2 * (basis.order - 2) + 1) / 2))
    nodes, weights = gauss_legendre_panels(basis.breakpoints, n_nodes)
    d2 = basis.derivative_matrix(nodes, 2)
    omega = (d2 * weights[:, None]).T @ d2
    return PenaltyMatrix(omega, kind="curvature")


def aristotelian_matrix(omega: PenaltyMatrix, gamma_left: float, gamma_right: float) -> PenaltyMatrix:
    """Add boundary-value penalties to the first and last diagonal entries."""
    if gamma_left < 0 or gamma_right < 0:
        raise ValueError("boundary hyperparameters must be nonnegative")
    if omega.kind != "curvature":
        raise ValueError("expected a curvature penalty")
    a = np.array(omega.entries)
    a[0, 0] += gamma_left
    a[-1, -1] += gamma_right
    kind = "aristotelian" if (gamma_left or gamma_right) else "curvature"
    return PenaltyMatrix(a, kind=kind, gamma_left=float(gamma_left), gamma_right=float(gamma_right))


def project_function(basis: SplineBasis, func, n_nodes: int = 16) -> np.ndarray:
    """Least-squares (L2) projection of ``func`` onto the spline space."""
    nodes, weights = gauss_legendre_panels(basis.breakpoints, n_nodes)
    design = eval_basis(basis, nodes)
    gram = (design * weights[:, None]).T @ design
    rhs = design.T @ (weights * np.asarray(func(nodes), dtype=float))
    return np.linalg.solve(gram, rhs)
