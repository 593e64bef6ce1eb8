"""Smearing kernels, detector efficiency and the discretized forward operator.

The response matrix has entries

    K[i, j] = int_{F_i} int_E k(t, s) eps(s) B_j(s) ds dt

and maps spline coefficients to expected bin counts of the smeared histogram.
For kernels whose bin probabilities are available in closed form (Gaussian,
Crystal Ball, identity) the inner ``t`` integral is done exactly and only the
``s`` integral uses Gauss-Legendre quadrature; tabulated kernels use a tensor
rule over (bin x knot span) cells.
"""

from __future__ import annotations

import csv
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .splines import SplineBasis, eval_basis, gauss_legendre_panels

logger = logging.getLogger(__name__)

__all__ = [
    "SmearingKernel",
    "GaussianKernel",
    "CrystalBallKernel",
    "IdentityKernel",
    "TabulatedKernel",
    "Efficiency",
    "ResponseMatrix",
    "QuadratureWarning",
    "kernel_density",
    "build_response_matrix",
    "smeared_mean",
    "read_kernel_csv",
    "write_kernel_csv",
    "read_matrix_csv",
    "write_matrix_csv",
]


class QuadratureWarning(RuntimeWarning):
    pass


class SmearingKernel:
    """Conditional density ``k(t, s)`` of the smeared value given the true one."""

    translation = False
    has_bin_probability = False

    def density(self, t, s):
        raise NotImplementedError

    def bin_probability(self, t_lo, t_hi, s):
        """``int_{t_lo}^{t_hi} k(t, s) dt`` for arrays of edges and points."""
        raise NotImplementedError

    def s_breakpoints(self, t_edges) -> np.ndarray:
        """True-space points where the bin probabilities lose smoothness."""
        return np.empty(0)

    def t_breakpoints(self) -> np.ndarray:
        return np.empty(0)

    def sample(self, s, rng: np.random.Generator) -> np.ndarray:
        """Draw one smeared value for each true value in ``s``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


class _TranslationKernel(SmearingKernel):
    translation = True
    has_bin_probability = True

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def density(self, t, s):
        return self.pdf(np.asarray(t, dtype=float) - np.asarray(s, dtype=float))

    def bin_probability(self, t_lo, t_hi, s):
        s = np.asarray(s, dtype=float)
        return self.cdf(np.asarray(t_hi) - s) - self.cdf(np.asarray(t_lo) - s)

    def sample(self, s, rng):
        s = np.asarray(s, dtype=float)
        return s + self.ppf(rng.random(s.shape))


@dataclass(frozen=True)
class GaussianKernel(_TranslationKernel):
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Gaussian kernel needs sigma > 0")

    def pdf(self, x):
        z = np.asarray(x, dtype=float) / self.sigma
        return np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigma)

    def cdf(self, x):
        return special.ndtr(np.asarray(x, dtype=float) / self.sigma)

    def ppf(self, u):
        return self.sigma * special.ndtri(u)

    def to_dict(self):
        return {"type": "gaussian", "sigma": self.sigma}


@dataclass(frozen=True)
class CrystalBallKernel(_TranslationKernel):
    """Gaussian core of mean ``delta_m`` and width ``sigma`` with a power-law left tail.

    ``alpha`` sets where the tail starts (in units of ``sigma`` below the
    mean) and ``gamma`` is the tail exponent.
    """

    delta_m: float = 0.0
    sigma: float = 1.0
    alpha: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("Crystal Ball needs sigma > 0")
        if not self.alpha > 0:
            raise ValueError("Crystal Ball needs alpha > 0")
        if not self.gamma > 1:
            raise ValueError("Crystal Ball needs gamma > 1")

    @property
    def _tail_mass(self):
        # int_{-inf}^{-alpha} of the unnormalized density in standardized units
        a, g = self.alpha, self.gamma
        return (g / a) / (g - 1.0) * math.exp(-0.5 * a * a)

    @property
    def _core_mass(self):
        return math.sqrt(math.pi / 2.0) * (1.0 + math.erf(self.alpha / math.sqrt(2.0)))

    @property
    def norm(self) -> float:
        """Normalization constant C."""
        return 1.0 / (self.sigma * (self._tail_mass + self._core_mass))

    def pdf(self, x):
        a, g = self.alpha, self.gamma
        z = (np.asarray(x, dtype=float) - self.delta_m) / self.sigma
        core = np.exp(-0.5 * z * z)
        # (g/a)^g (g/a - a - z)^(-g) rewritten so that no factor can overflow
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            tail = math.exp(-0.5 * a * a) * np.power(1.0 + a * (-a - z) / g, -g)
        return self.norm * np.where(z > -a, core, tail)

    def cdf(self, x):
        a, g = self.alpha, self.gamma
        z = (np.asarray(x, dtype=float) - self.delta_m) / self.sigma
        total = self._tail_mass + self._core_mass
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            tail = self._tail_mass * np.power(1.0 + a * (-a - z) / g, 1.0 - g)
        core = self._tail_mass + math.sqrt(math.pi / 2.0) * (
            special.erf(z / math.sqrt(2.0)) + math.erf(a / math.sqrt(2.0))
        )
        return np.where(z > -a, core, tail) / total

    def ppf(self, u):
        a, g = self.alpha, self.gamma
        u = np.asarray(u, dtype=float)
        total = self._tail_mass + self._core_mass
        v = u * total
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            z_tail = -a - (g / a) * (np.power(v / self._tail_mass, 1.0 / (1.0 - g)) - 1.0)
            phi = (v - self._tail_mass) / math.sqrt(2 * math.pi) + special.ndtr(-a)
            z_core = special.ndtri(np.clip(phi, 0.0, 1.0))
        z = np.where(v <= self._tail_mass, z_tail, z_core)
        return self.delta_m + self.sigma * z

    def s_breakpoints(self, t_edges):
        return np.asarray(t_edges, dtype=float) - self.delta_m + self.alpha * self.sigma

    def to_dict(self):
        return {
            "type": "crystal_ball",
            "delta_m": self.delta_m,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "gamma": self.gamma,
        }


@dataclass(frozen=True)
class IdentityKernel(_TranslationKernel):
    """No smearing: ``k(t, s)`` is a point mass at ``t = s``."""

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x == 0, np.inf, 0.0)

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= 0).astype(float)

    def ppf(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def bin_probability(self, t_lo, t_hi, s):
        s = np.asarray(s, dtype=float)
        return ((s >= np.asarray(t_lo)) & (s < np.asarray(t_hi))).astype(float)

    def s_breakpoints(self, t_edges):
        return np.asarray(t_edges, dtype=float)

    def to_dict(self):
        return {"type": "identity"}


class TabulatedKernel(SmearingKernel):
    """Kernel given on a rectangular ``(t, s)`` grid, bilinear in between.

    Outside the grid the kernel is zero.
    """

    def __init__(self, t_grid, s_grid, values):
        self.t_grid = np.asarray(t_grid, dtype=float)
        self.s_grid = np.asarray(s_grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.t_grid.size, self.s_grid.size):
            raise ValueError("tabulated values must have shape (len(t_grid), len(s_grid))")
        if np.any(np.diff(self.t_grid) <= 0) or np.any(np.diff(self.s_grid) <= 0):
            raise ValueError("kernel grids must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("kernel values must be nonnegative")

    def density(self, t, s):
        t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
        tg, sg = self.t_grid, self.s_grid
        inside = (t >= tg[0]) & (t <= tg[-1]) & (s >= sg[0]) & (s <= sg[-1])
        i = np.clip(np.searchsorted(tg, t, side="right") - 1, 0, tg.size - 2)
        j = np.clip(np.searchsorted(sg, s, side="right") - 1, 0, sg.size - 2)
        u = (t - tg[i]) / (tg[i + 1] - tg[i])
        v = (s - sg[j]) / (sg[j + 1] - sg[j])
        z = self.values
        val = (
            (1 - u) * (1 - v) * z[i, j]
            + u * (1 - v) * z[i + 1, j]
            + (1 - u) * v * z[i, j + 1]
            + u * v * z[i + 1, j + 1]
        )
        return np.where(inside, val, 0.0)

    def s_breakpoints(self, t_edges):
        return self.s_grid

    def t_breakpoints(self):
        return self.t_grid

    def sample(self, s, rng):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s)
        tg = self.t_grid
        dt = np.diff(tg)
        for idx, point in enumerate(s):
            col = self.density(tg, np.full_like(tg, point))
            lo_v, hi_v = col[:-1], col[1:]
            mass = 0.5 * (lo_v + hi_v) * dt
            if mass.sum() <= 0:
                out[idx] = np.nan
                continue
            cell = rng.choice(mass.size, p=mass / mass.sum())
            # invert the linear density on the chosen cell
            a, b, w = lo_v[cell], hi_v[cell], dt[cell]
            u = rng.random()
            if abs(b - a) < 1e-14 * max(a, b, 1e-300):
                x = u
            else:
                x = (-a + math.sqrt(a * a + u * (b * b - a * a))) / (b - a)
            out[idx] = tg[cell] + x * w
        return out

    def to_dict(self):
        return {"type": "tabulated"}


def kernel_density(kernel: SmearingKernel, t, s):
    """Evaluate ``k(t, s)``."""
    return kernel.density(t, s)


class Efficiency:
    """Detection probability as a function of the true value (default 1)."""

    def __init__(self, func=None):
        self.func = func

    @property
    def is_unit(self) -> bool:
        return self.func is None

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        if self.func is None:
            return np.ones_like(s)
        eff = np.broadcast_to(np.asarray(self.func(s), dtype=float), s.shape)
        if np.any(eff < 0) or np.any(eff > 1):
            raise ValueError("efficiency must lie in [0, 1]")
        return eff

    @classmethod
    def constant(cls, value: float) -> "Efficiency":
        if not 0 <= value <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if value == 1:
            return cls()
        return cls(functools.partial(np.full_like, fill_value=float(value)))


@dataclass(frozen=True)
class ResponseMatrix:
    """Discretized forward operator plus the metadata it was built from."""

    entries: np.ndarray = field(repr=False)
    bin_edges: np.ndarray = field(repr=False)
    basis: SplineBasis | None = None
    condition_number: float = float("nan")
    converged: bool = True
    n_nodes: int = 0

    def __post_init__(self):
        k = np.array(self.entries, dtype=float)
        edges = np.array(self.bin_edges, dtype=float)
        if k.ndim != 2:
            raise ValueError("response matrix must be 2-D")
        if edges.size != k.shape[0] + 1:
            raise ValueError("need n + 1 bin edges for an n-row response")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if np.any(k < 0):
            raise ValueError("response entries must be nonnegative")
        if self.basis is not None and self.basis.n_basis != k.shape[1]:
            raise ValueError("response columns do not match the spline basis")
        k.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "entries", k)
        object.__setattr__(self, "bin_edges", edges)
        if not np.isfinite(self.condition_number):
            object.__setattr__(self, "condition_number", float(np.linalg.cond(k)))

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n_bins(self) -> int:
        return self.entries.shape[0]

    @property
    def n_basis(self) -> int:
        return self.entries.shape[1]

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)


def _s_panels(basis: SplineBasis, extra) -> np.ndarray:
    lo, hi = basis.domain
    pts = np.asarray(extra, dtype=float)
    pts = pts[(pts > lo) & (pts < hi)]
    edges = np.unique(np.r_[basis.breakpoints, pts])
    # drop slivers that would only add round-off
    keep = np.r_[True, np.diff(edges) > 1e-12 * (hi - lo)]
    return edges[keep]


def _assemble(kernel, efficiency, basis, bin_edges, n_nodes):
    s_edges = _s_panels(basis, kernel.s_breakpoints(bin_edges))
    s_nodes, s_weights = gauss_legendre_panels(s_edges, n_nodes)
    design = eval_basis(basis, s_nodes)
    weighted = design * (s_weights * efficiency(s_nodes))[:, None]
    if kernel.has_bin_probability:
        probs = kernel.bin_probability(bin_edges[:-1, None], bin_edges[1:, None], s_nodes[None, :])
    else:
        tb = np.asarray(kernel.t_breakpoints(), dtype=float)
        probs = np.empty((bin_edges.size - 1, s_nodes.size))
        for i, (lo, hi) in enumerate(zip(bin_edges[:-1], bin_edges[1:])):
            t_edges = np.unique(np.r_[lo, tb[(tb > lo) & (tb < hi)], hi])
            t_nodes, t_weights = gauss_legendre_panels(t_edges, n_nodes)
            probs[i] = t_weights @ kernel.density(t_nodes[:, None], s_nodes[None, :])
    return probs @ weighted


def build_response_matrix(
    kernel: SmearingKernel,
    basis: SplineBasis,
    bin_edges,
    efficiency: Efficiency | None = None,
    n_nodes: int = 8,
    rtol: float = 1e-8,
    max_nodes: int = 64,
) -> ResponseMatrix:
    """Assemble the response matrix by panel-wise Gauss-Legendre quadrature.

    Node counts are doubled until no entry moves by more than ``rtol``
    relative to its size (entries below ``1e-14`` of the matrix maximum are
    judged on that absolute scale). If ``max_nodes`` is reached first a
    :class:`QuadratureWarning` is issued and ``converged`` is False.
    """
    efficiency = efficiency or Efficiency()
    bin_edges = np.asarray(bin_edges, dtype=float)
    if bin_edges.ndim != 1 or bin_edges.size < 2 or np.any(np.diff(bin_edges) <= 0):
        raise ValueError("bin edges must be a strictly increasing sequence")
    current = _assemble(kernel, efficiency, basis, bin_edges, n_nodes)
    converged = False
    while n_nodes < max_nodes:
        refined = _assemble(kernel, efficiency, basis, bin_edges, 2 * n_nodes)
        atol = 1e-14 * max(np.abs(refined).max(), 1e-300)
        change = np.abs(refined - current)
        n_nodes *= 2
        current = refined
        if np.all(change <= rtol * np.abs(refined) + atol):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"response quadrature not converged at {n_nodes} nodes per panel",
            QuadratureWarning,
            stacklevel=2,
        )
    current = np.clip(current, 0.0, None)
    logger.debug("response matrix %s assembled with %d nodes", current.shape, n_nodes)
    return ResponseMatrix(
        current,
        bin_edges,
        basis=basis,
        converged=converged,
        n_nodes=n_nodes,
    )


def smeared_mean(response: ResponseMatrix, beta) -> np.ndarray:
    """Expected bin counts ``K @ beta``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != response.n_basis:
        raise ValueError(
            f"coefficient length {beta.shape[-1]} does not match response with {response.n_basis} columns"
        )
    if np.any(beta < 0):
        raise ValueError("coefficients must be nonnegative")
    return beta @ response.entries.T


def write_kernel_csv(path, t_grid, s_grid, values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "s", "value"])
        for i, t in enumerate(t_grid):
            for j, s in enumerate(s_grid):
                writer.writerow([repr(float(t)), repr(float(s)), repr(float(values[i, j]))])


def read_kernel_csv(path) -> TabulatedKernel:
    rows = _read_numeric_csv(path, ("t", "s", "value"))
    t_grid = np.unique(rows[:, 0])
    s_grid = np.unique(rows[:, 1])
    values = np.full((t_grid.size, s_grid.size), np.nan)
    values[np.searchsorted(t_grid, rows[:, 0]), np.searchsorted(s_grid, rows[:, 1])] = rows[:, 2]
    if np.isnan(values).any():
        raise ValueError(f"{path}: kernel table is not a complete rectangular grid")
    return TabulatedKernel(t_grid, s_grid, values)


def write_matrix_csv(path, response: ResponseMatrix | np.ndarray) -> None:
    entries = response.entries if isinstance(response, ResponseMatrix) else np.asarray(response)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value"])
        for i in range(entries.shape[0]):
            for j in range(entries.shape[1]):
                writer.writerow([i, j, repr(float(entries[i, j]))])


def read_matrix_csv(path) -> np.ndarray:
    rows = _read_numeric_csv(path, ("i", "j", "value"))
    idx = rows[:, :2].astype(int)
    if np.any(idx != rows[:, :2]) or np.any(idx < 0):
        raise ValueError(f"{path}: matrix indices must be nonnegative integers")
    out = np.zeros((idx[:, 0].max() + 1, idx[:, 1].max() + 1))
    out[idx[:, 0], idx[:, 1]] = rows[:, 2]
    return out


def _read_numeric_csv(path, header):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != list(header):
            raise ValueError(f"{path}: expected header {','.join(header)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno} is not numeric: {row!r}") from exc
    return np.asarray(rows, dtype=float).reshape(-1, len(header))
