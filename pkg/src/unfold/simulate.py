"""Poisson point-process data generation: true intensities, thinning, smearing and binning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._random import substream
from .forward_model import Efficiency, IdentityKernel, SmearingKernel
from .splines import SplineBasis, eval_basis, gauss_legendre_panels

__all__ = [
    "TrueIntensity",
    "GaussianMixtureIntensity",
    "BreitWignerIntensity",
    "SplineIntensity",
    "CustomIntensity",
    "BinnedCounts",
    "sample_true_points",
    "thin_and_smear",
    "bin_points",
    "binomial_split",
    "read_counts_csv",
    "write_counts_csv",
]


class TrueIntensity:
    """Nonnegative intensity on a bounded true-space interval."""

    domain: tuple[float, float]

    def __call__(self, s) -> np.ndarray:
        raise NotImplementedError

    def total(self) -> float:
        """Expected number of points, the integral of the intensity over the domain."""
        lo, hi = self.domain
        nodes, weights = gauss_legendre_panels(np.linspace(lo, hi, 201), 16)
        return float(weights @ self(nodes))

    def sample_positions(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """i.i.d. draws from the normalized intensity (inverse CDF on a tabulation)."""
        lo, hi = self.domain
        grid = np.linspace(lo, hi, 100_001)
        dens = np.clip(self(grid), 0, None)
        cdf = np.r_[0.0, np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))]
        if cdf[-1] <= 0:
            return np.empty(0)
        cdf /= cdf[-1]
        return np.interp(rng.random(size), cdf, grid)


@dataclass(frozen=True)
class GaussianMixtureIntensity(TrueIntensity):
    """Two Gaussian bumps on a uniform background, scaled by ``lambda_tot``."""

    lambda_tot: float
    weights: tuple[float, float, float] = (0.2, 0.5, 0.3)
    means: tuple[float, float] = (-2.0, 2.0)
    sds: tuple[float, float] = (1.0, 1.0)
    domain: tuple[float, float] = (-7.0, 7.0)

    def __post_init__(self):
        if self.lambda_tot < 0:
            raise ValueError("lambda_tot must be nonnegative")
        if any(w < 0 for w in self.weights) or not math.isclose(sum(self.weights), 1.0):
            raise ValueError("mixture weights must be nonnegative and sum to one")

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.domain
        out = np.full_like(s, self.weights[2] / (hi - lo))
        for w, m, sd in zip(self.weights[:2], self.means, self.sds):
            out = out + w * np.exp(-0.5 * ((s - m) / sd) ** 2) / (math.sqrt(2 * math.pi) * sd)
        return self.lambda_tot * out

    def _component_masses(self):
        lo, hi = self.domain
        masses = [
            w * (special.ndtr((hi - m) / sd) - special.ndtr((lo - m) / sd))
            for w, m, sd in zip(self.weights[:2], self.means, self.sds)
        ]
        return np.array(masses + [self.weights[2]])

    def total(self):
        return float(self.lambda_tot * self._component_masses().sum())

    def sample_positions(self, size, rng):
        lo, hi = self.domain
        masses = self._component_masses()
        comp = rng.choice(3, size=size, p=masses / masses.sum())
        out = np.empty(size)
        for c in range(2):
            idx = np.flatnonzero(comp == c)
            m, sd = self.means[c], self.sds[c]
            a, b = special.ndtr((lo - m) / sd), special.ndtr((hi - m) / sd)
            out[idx] = m + sd * special.ndtri(a + (b - a) * rng.random(idx.size))
        idx = np.flatnonzero(comp == 2)
        out[idx] = rng.uniform(lo, hi, idx.size)
        return out


@dataclass(frozen=True)
class BreitWignerIntensity(TrueIntensity):
    """``scale`` times the Cauchy (Breit-Wigner) density with mode ``m_z`` and full width ``width``."""

    scale: float
    m_z: float = 91.1876
    width: float = 2.4952
    domain: tuple[float, float] = (65.0, 115.0)

    def density(self, m):
        m = np.asarray(m, dtype=float)
        g = self.width
        return g / (2 * math.pi) / ((m - self.m_z) ** 2 + g * g / 4)

    def cdf(self, m):
        return 0.5 + np.arctan(2 * (np.asarray(m, dtype=float) - self.m_z) / self.width) / math.pi

    def __call__(self, s):
        return self.scale * self.density(s)

    def total(self):
        lo, hi = self.domain
        return float(self.scale * (self.cdf(hi) - self.cdf(lo)))

    def sample_positions(self, size, rng):
        lo, hi = self.domain
        u = self.cdf(lo) + (self.cdf(hi) - self.cdf(lo)) * rng.random(size)
        return self.m_z + 0.5 * self.width * np.tan(math.pi * (u - 0.5))


@dataclass(frozen=True)
class SplineIntensity(TrueIntensity):
    basis: SplineBasis
    beta: np.ndarray = field(repr=False)

    @property
    def domain(self):
        return self.basis.domain

    def __call__(self, s):
        return eval_basis(self.basis, np.atleast_1d(s)) @ np.asarray(self.beta, dtype=float)

    def total(self):
        return float(self.basis.integrals() @ np.asarray(self.beta, dtype=float))


@dataclass(frozen=True)
class CustomIntensity(TrueIntensity):
    func: object
    domain: tuple[float, float]

    def __call__(self, s):
        return np.asarray(self.func(np.asarray(s, dtype=float)), dtype=float)


@dataclass(frozen=True)
class BinnedCounts:
    """Histogram of smeared points with ``len(counts) + 1`` edges."""

    counts: np.ndarray
    bin_edges: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        edges = np.asarray(self.bin_edges, dtype=float)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        as_int = np.rint(counts).astype(np.int64)
        if np.any(as_int != counts) or np.any(as_int < 0):
            raise ValueError("counts must be nonnegative integers")
        if edges.size != counts.size + 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("need strictly increasing edges, one more than the counts")
        as_int.setflags(write=False)
        edges = edges.copy()
        edges.setflags(write=False)
        object.__setattr__(self, "counts", as_int)
        object.__setattr__(self, "bin_edges", edges)

    @property
    def n_bins(self):
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def restrict(self, lo: float, hi: float) -> "BinnedCounts":
        """Sub-histogram of the bins lying inside ``[lo, hi]``."""
        e = self.bin_edges
        keep = (e[:-1] >= lo - 1e-9) & (e[1:] <= hi + 1e-9)
        idx = np.flatnonzero(keep)
        if idx.size == 0:
            raise ValueError(f"no bins inside [{lo}, {hi}]")
        return BinnedCounts(self.counts[idx], e[idx[0] : idx[-1] + 2])


def sample_true_points(intensity: TrueIntensity, rng_seed) -> np.ndarray:
    """Realize the Poisson process with the given intensity."""
    rng = substream(rng_seed)
    lam = intensity.total()
    if lam <= 0:
        return np.empty(0)
    n = rng.poisson(lam)
    return np.sort(intensity.sample_positions(n, rng))


def thin_and_smear(
    points,
    kernel: SmearingKernel,
    smeared_domain,
    rng_seed,
    efficiency: Efficiency | None = None,
) -> np.ndarray:
    """Keep each point with probability ``efficiency(x)``, smear it, drop what leaves ``smeared_domain``."""
    rng = substream(rng_seed)
    points = np.asarray(points, dtype=float)
    efficiency = efficiency or Efficiency()
    if points.size == 0:
        return points.copy()
    keep = rng.random(points.size) < efficiency(points)
    kept = points[keep]
    if isinstance(kernel, IdentityKernel):
        smeared = kept.copy()
    else:
        smeared = kernel.sample(kept, rng)
    lo, hi = smeared_domain
    return smeared[(smeared >= lo) & (smeared <= hi)]


def bin_points(points, bin_edges) -> BinnedCounts:
    """Histogram with half-open bins ``[lo, hi)``; the last bin is closed."""
    edges = np.asarray(bin_edges, dtype=float)
    counts, _ = np.histogram(np.asarray(points, dtype=float), bins=edges)
    return BinnedCounts(counts, edges)


def binomial_split(counts: BinnedCounts, keep_prob: float, rng_seed):
    """Split each bin binomially into two independent histograms."""
    if not 0 < keep_prob < 1:
        raise ValueError("keep_prob must lie in (0, 1)")
    rng = substream(rng_seed)
    first = rng.binomial(counts.counts, keep_prob)
    return (
        BinnedCounts(first, counts.bin_edges),
        BinnedCounts(counts.counts - first, counts.bin_edges),
    )


def write_counts_csv(path, counts: BinnedCounts) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(counts.bin_edges[:-1], counts.bin_edges[1:], counts.counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def read_counts_csv(path) -> BinnedCounts:
    """Read a ``bin_lo,bin_hi,count`` histogram; errors name the offending row."""
    los, his, counts = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["bin_lo", "bin_hi", "count"]:
            raise ValueError(f"{path}: expected header bin_lo,bin_hi,count")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: row {lineno}: expected 3 fields, got {len(row)}")
            try:
                lo, hi, c = float(row[0]), float(row[1]), float(row[2])
            except ValueError:
                raise ValueError(f"{path}: row {lineno}: non-numeric value in {row!r}") from None
            if c < 0 or c != int(c):
                raise ValueError(f"{path}: row {lineno}: count must be a nonnegative integer")
            if los and not math.isclose(lo, his[-1], rel_tol=1e-9, abs_tol=1e-12):
                raise ValueError(f"{path}: row {lineno}: bin_lo does not match previous bin_hi")
            if hi <= lo:
                raise ValueError(f"{path}: row {lineno}: bin_hi must exceed bin_lo")
            los.append(lo)
            his.append(hi)
            counts.append(int(c))
    if not counts:
        raise ValueError(f"{path}: no bins")
    return BinnedCounts(np.array(counts), np.r_[los, his[-1]])
