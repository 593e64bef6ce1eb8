"""End-to-end experiments: single unfoldings, coverage studies and the Z-peak analysis."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import time
from dataclasses import MISSING, asdict, dataclass, field, fields, replace

import numpy as np

from ._parallel import pmap
from ._random import child_seed, substream
from .empirical_bayes import McemConfig, McemTrace, run_mcem
from .fastpath import RidgeModel, RidgeRefit, ridge_estimate
from .forward_model import (
    CrystalBallKernel,
    Efficiency,
    GaussianKernel,
    IdentityKernel,
    ResponseMatrix,
    build_response_matrix,
)
from .inference import PosteriorChain, PosteriorModel, nnls_init, sample_posterior
from .simulate import (
    BinnedCounts,
    BreitWignerIntensity,
    GaussianMixtureIntensity,
    TrueIntensity,
    bin_points,
    sample_true_points,
    thin_and_smear,
)
from .splines import aristotelian_matrix, build_basis, curvature_matrix, eval_basis
from .uncertainty import (
    METHODS,
    BiasCorrectionConfig,
    BootstrapSample,
    IntervalBand,
    PosteriorRefit,
    band_from_sample,
    bootstrap_sample,
    credible_band,
)
from .zboson import CrystalBallFit, ZDataset, fit_crystal_ball, simulate_zboson

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "StageError",
    "ExperimentConfig",
    "UnfoldingResult",
    "CoverageReport",
    "ZbosonResult",
    "simulate_data",
    "run_unfolding",
    "run_coverage_study",
    "coverage_vs_nbc",
    "run_zboson",
    "write_coverage_csv",
    "read_coverage_csv",
]

MAX_FULL_REPLICATES = 50
MAX_FAILURE_RATE = 0.01


class ConfigError(ValueError):
    """Malformed experiment configuration; the message names the field."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


# ---------------------------------------------------------------------------
# configuration


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing required field '{where}{key}'")
    return d[key]


def _check_keys(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"field '{where.rstrip('.')}' must be an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field '{where}{unknown[0]}'")


_TRUTH_KEYS = {
    "gmm": {"kind", "lambda_tot", "weights", "means", "sds"},
    "breit_wigner": {"kind", "scale", "m_z", "width", "n_events"},
}
_KERNEL_KEYS = {
    "gaussian": {"kind", "sigma"},
    "crystal_ball": {"kind", "delta_m", "sigma", "alpha", "gamma"},
    "identity": {"kind"},
}
_MCEM_KEYS = {"delta0", "n_em", "n_samples", "burn_in", "early_stop_tol"}
_BC_KEYS = {"n_bc", "r_bc", "n_samples", "burn_in"}
_COVERAGE_KEYS = {"delta_mode", "delta", "n_pilot", "n_replicates", "methods"}
_ZBOSON_KEYS = {"fit_domain", "n_fit_bins", "keep_prob", "fit_cb"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to simulate, unfold and assess one setup.

    Nested settings are kept as plain dictionaries so that the JSON form and
    the in-memory form are the same object; :meth:`validate` checks them.
    """

    name: str
    truth: dict
    kernel: dict
    true_domain: tuple
    smeared_domain: tuple
    n_bins: int
    n_interior_knots: int
    units: str = "arbitrary"
    spline_order: int = 4
    gamma_left: float = 5.0
    gamma_right: float = 5.0
    efficiency: float = 1.0
    mcem: dict = field(default_factory=dict)
    bias_correction: dict = field(default_factory=dict)
    r_uq: int = 200
    alpha: float = 0.025
    grid_size: int = 200
    seed: int = 0
    estimator: str = "full"
    methods: tuple = ("bc_percentile", "percentile", "stderr", "credible")
    delta: float | None = None
    coverage: dict = field(default_factory=dict)
    zboson: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "true_domain", tuple(float(v) for v in self.true_domain))
        object.__setattr__(self, "smeared_domain", tuple(float(v) for v in self.smeared_domain))
        object.__setattr__(self, "methods", tuple(self.methods))
        self.validate()

    # -- validation ------------------------------------------------------
    def validate(self):
        truth = self.truth
        kind = _require(truth, "kind", "truth.")
        if kind not in _TRUTH_KEYS:
            raise ConfigError(f"field 'truth.kind' must be one of {sorted(_TRUTH_KEYS)}, got {kind!r}")
        _check_keys(truth, _TRUTH_KEYS[kind], "truth.")
        if kind == "gmm":
            _require(truth, "lambda_tot", "truth.")
        elif "scale" not in truth and "n_events" not in truth:
            raise ConfigError("missing required field 'truth.n_events' (or 'truth.scale')")
        kk = _require(self.kernel, "kind", "kernel.")
        if kk not in _KERNEL_KEYS:
            raise ConfigError(f"field 'kernel.kind' must be one of {sorted(_KERNEL_KEYS)}, got {kk!r}")
        _check_keys(self.kernel, _KERNEL_KEYS[kk], "kernel.")
        for name in ("true_domain", "smeared_domain"):
            lo_hi = getattr(self, name)
            if len(lo_hi) != 2 or not lo_hi[1] > lo_hi[0]:
                raise ConfigError(f"field '{name}' must be an increasing pair")
        if self.n_bins < 1:
            raise ConfigError("field 'n_bins' must be positive")
        if self.n_interior_knots < 0 or self.spline_order < 3:
            raise ConfigError("fields 'n_interior_knots' >= 0 and 'spline_order' >= 3 required")
        if self.gamma_left < 0 or self.gamma_right < 0:
            raise ConfigError("fields 'gamma_left'/'gamma_right' must be nonnegative")
        if not 0 <= self.efficiency <= 1:
            raise ConfigError("field 'efficiency' must lie in [0, 1]")
        _check_keys(self.mcem, _MCEM_KEYS, "mcem.")
        _check_keys(self.bias_correction, _BC_KEYS, "bias_correction.")
        _check_keys(self.coverage, _COVERAGE_KEYS, "coverage.")
        if self.zboson is not None:
            _check_keys(self.zboson, _ZBOSON_KEYS, "zboson.")
        if self.estimator not in ("full", "fast"):
            raise ConfigError("field 'estimator' must be 'full' or 'fast'")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"field 'methods' has unknown method {bad[0]!r}")
        if not 0 < self.alpha < 0.5:
            raise ConfigError("field 'alpha' must lie in (0, 0.5)")
        if self.grid_size < 2:
            raise ConfigError("field 'grid_size' must be at least 2")
        if self.delta is not None and not self.delta > 0:
            raise ConfigError("field 'delta' must be positive")
        try:
            self.mcem_config()
            self.bc_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["true_domain"] = list(self.true_domain)
        d["smeared_domain"] = list(self.smeared_domain)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown field '{unknown[0]}'")
        required = [f.name for f in fields(cls) if f.default is MISSING and f.default_factory is MISSING]
        for name in required:
            _require(d, name, "")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    # -- builders --------------------------------------------------------
    def build_truth(self) -> TrueIntensity:
        t = self.truth
        if t["kind"] == "gmm":
            kw = {k: tuple(t[k]) for k in ("weights", "means", "sds") if k in t}
            return GaussianMixtureIntensity(float(t["lambda_tot"]), domain=self.true_domain, **kw)
        m_z, width = t.get("m_z", 91.1876), t.get("width", 2.4952)
        if "scale" in t:
            return BreitWignerIntensity(float(t["scale"]), m_z, width, self.zboson_fit_domain())
        from .zboson import smeared_bin_means

        unit = BreitWignerIntensity(1.0, m_z, width, self.zboson_fit_domain())
        edges = self.zboson_fit_edges()
        return replace(unit, scale=float(t["n_events"]) / smeared_bin_means(edges, self.build_kernel(), unit).sum())

    def build_kernel(self):
        k = dict(self.kernel)
        kind = k.pop("kind")
        return {"gaussian": GaussianKernel, "crystal_ball": CrystalBallKernel, "identity": IdentityKernel}[kind](**k)

    def build_efficiency(self) -> Efficiency:
        return Efficiency.constant(self.efficiency)

    def build_basis(self):
        return build_basis(self.true_domain, self.n_interior_knots, self.spline_order)

    def bin_edges(self) -> np.ndarray:
        return np.linspace(*self.smeared_domain, self.n_bins + 1)

    def grid(self) -> np.ndarray:
        return np.linspace(*self.true_domain, self.grid_size)

    def mcem_config(self, **overrides) -> McemConfig:
        kw = {"delta0": 1e-5, "n_em": 30, "n_samples": 1000, "burn_in": None, "early_stop_tol": None}
        kw.update(self.mcem)
        kw.update(overrides)
        return McemConfig(**kw)

    def bc_config(self, **overrides) -> BiasCorrectionConfig:
        kw = {"n_bc": 5, "r_bc": 10, "n_samples": 1000, "burn_in": None}
        kw.update(self.bias_correction)
        kw.update(overrides)
        return BiasCorrectionConfig(**kw)

    def zboson_fit_domain(self) -> tuple:
        z = self.zboson or {}
        return tuple(float(v) for v in z.get("fit_domain", self.true_domain))

    def zboson_fit_edges(self) -> np.ndarray:
        z = self.zboson or {}
        return np.linspace(*self.zboson_fit_domain(), int(z.get("n_fit_bins", 100)) + 1)


# ---------------------------------------------------------------------------
# single unfolding


@contextlib.contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    logger.info("stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


@dataclass
class UnfoldingResult:
    config: ExperimentConfig
    y: BinnedCounts
    response: ResponseMatrix
    omega_a: np.ndarray
    beta_init: np.ndarray
    delta_hat: float
    trace: McemTrace | None
    chain: PosteriorChain | None
    beta_hat: np.ndarray
    beta_bc: np.ndarray
    grid: np.ndarray
    bands: dict
    truth: np.ndarray | None
    sample: BootstrapSample | None = None
    timings: dict = field(default_factory=dict)

    @property
    def f_hat(self) -> np.ndarray:
        return eval_basis(self.response.basis, self.grid) @ self.beta_hat

    @property
    def f_bc(self) -> np.ndarray:
        return eval_basis(self.response.basis, self.grid) @ self.beta_bc


def simulate_data(config: ExperimentConfig, rng_seed) -> BinnedCounts:
    """Realize one smeared histogram from the configured truth."""
    truth = config.build_truth()
    pts = sample_true_points(truth, substream(rng_seed, 0))
    smeared = thin_and_smear(pts, config.build_kernel(), config.smeared_domain, substream(rng_seed, 1), config.build_efficiency())
    return bin_points(smeared, config.bin_edges())


def _check_binning(config, y: BinnedCounts):
    edges = config.bin_edges()
    if y.n_bins != edges.size - 1 or not np.allclose(y.bin_edges, edges, rtol=0, atol=1e-9 * np.ptp(edges)):
        raise ValueError(
            f"data binning ({y.n_bins} bins on [{y.bin_edges[0]}, {y.bin_edges[-1]}]) does not match the "
            f"configuration ({config.n_bins} bins on {list(config.smeared_domain)})"
        )


def _model_parts(config: ExperimentConfig, kernel=None):
    basis = config.build_basis()
    kernel = kernel or config.build_kernel()
    K = build_response_matrix(kernel, basis, config.bin_edges(), config.build_efficiency())
    omega_a = aristotelian_matrix(curvature_matrix(basis), config.gamma_left, config.gamma_right)
    return basis, K, omega_a


def run_unfolding(config: ExperimentConfig, y: BinnedCounts | None = None, *, kernel=None, truth=None, workers: int = 1) -> UnfoldingResult:
    """Full pipeline: response, initialization, MCEM, point estimate, bias correction, bands.

    ``y=None`` simulates data from the configured truth with ``config.seed``.
    ``kernel`` overrides the configured kernel (used after a resolution fit)
    and ``truth`` overrides the intensity used for reporting.
    """
    timings: dict = {}
    seed = config.seed
    if y is None:
        with _stage("simulate", timings):
            y = simulate_data(config, child_seed(seed, 0))
    with _stage("response", timings):
        _check_binning(config, y)
        basis, K, omega = _model_parts(config, kernel)
    grid = config.grid()
    with _stage("init", timings):
        beta_init = nnls_init(y, basis)
    trace = None
    with _stage("mcem", timings):
        if config.delta is not None:
            delta_hat = float(config.delta)
        else:
            mcfg = replace(config.mcem_config(), beta_init=beta_init, rng_seed=child_seed(seed, 1))
            delta_hat, trace = run_mcem(PosteriorModel(K, y, omega, mcfg.delta0), mcfg)
    mcfg = config.mcem_config()
    with _stage("posterior", timings):
        start = trace.chain_means[-1] if trace is not None else beta_init
        chain = sample_posterior(
            PosteriorModel(K, y, omega, delta_hat), mcfg.n_samples, start, burn_in=mcfg.burn_in, rng_seed=child_seed(seed, 2)
        )
    bc = config.bc_config(rng_seed=child_seed(seed, 3))
    if config.estimator == "fast":
        refit = RidgeRefit(RidgeModel(K, omega, delta_hat))
        beta_hat = ridge_estimate(y, RidgeModel(K, omega, delta_hat))
    else:
        refit = PosteriorRefit.from_response(K, omega, delta_hat, bc.n_samples, bc.burn_in, bc.rng_seed, workers=workers)
        beta_hat = chain.mean()
    bands: dict[str, IntervalBand] = {}
    sample = None
    boot_methods = [m for m in config.methods if m in ("bc_percentile", "percentile", "stderr")]
    with _stage("bootstrap", timings):
        if boot_methods:
            sample = bootstrap_sample(y, beta_hat, K, bc, config.r_uq, refit, "data")
            for m in boot_methods:
                bands[m] = band_from_sample(sample, basis, m, config.alpha, grid)
            beta_bc = sample.observed[-1]
        else:
            from .uncertainty import _bc_paths

            beta_bc = _bc_paths(beta_hat[None, :], refit, K, bc, [0])[0, -1]
        if "basic" in config.methods:
            basic = bootstrap_sample(y, beta_hat, K, replace(bc, n_bc=0), config.r_uq, refit, "model")
            bands["basic"] = band_from_sample(basic, basis, "basic", config.alpha, grid)
        if "credible" in config.methods:
            bands["credible"] = credible_band(chain, basis, config.alpha, grid)
    truth = truth if truth is not None else config.build_truth()
    truth_vals = np.asarray(truth(grid), dtype=float) if truth is not None else None
    return UnfoldingResult(
        config, y, K, omega.entries, beta_init, delta_hat, trace, chain, beta_hat, beta_bc, grid, bands, truth_vals, sample, timings
    )


# ---------------------------------------------------------------------------
# coverage


@dataclass(frozen=True)
class CoverageReport:
    """Pointwise empirical coverage and mean width of one band type."""

    grid: np.ndarray = field(repr=False)
    coverage: np.ndarray = field(repr=False)
    mean_width: np.ndarray = field(repr=False)
    method: str
    n_rep: int
    nominal: float
    n_bc: int | None = None
    n_failed: int = 0
    delta: float | None = None

    def __post_init__(self):
        if self.n_rep < 1:
            raise ValueError("a coverage report needs at least one replicate")
        cov = np.asarray(self.coverage, dtype=float)
        if np.any(cov < 0) or np.any(cov > 1):
            raise ValueError("coverage values must lie in [0, 1]")

    @property
    def average_coverage(self) -> float:
        return float(np.mean(self.coverage))

    @property
    def average_width(self) -> float:
        return float(np.mean(self.mean_width))

    def coverage_at(self, s: float) -> float:
        return float(self.coverage[np.argmin(np.abs(self.grid - s))])

    @property
    def label(self) -> str:
        return self.method if self.n_bc is None else f"{self.method}_nbc{self.n_bc}"


@dataclass(frozen=True)
class _CoverageJob:
    config: ExperimentConfig
    K: ResponseMatrix
    omega: np.ndarray
    grid: np.ndarray
    truth: np.ndarray
    delta: float | None
    methods: tuple
    levels: tuple

    def __call__(self, r: int):
        try:
            return r, self._run(r)
        except Exception as exc:  # failures are counted, not fatal, up to a threshold
            logger.warning("coverage replicate %d failed: %s", r, exc)
            return r, f"{type(exc).__name__}: {exc}"

    def _run(self, r: int) -> dict:
        cfg, K, omega = self.config, self.K, self.omega
        basis = K.basis
        seed = cfg.seed
        y = simulate_data(cfg, child_seed(seed, 10, r))
        delta = self.delta
        if delta is None:
            mcfg = replace(cfg.mcem_config(), beta_init=nnls_init(y, basis), rng_seed=child_seed(seed, 11, r))
            delta, _ = run_mcem(PosteriorModel(K, y, omega, mcfg.delta0), mcfg)
        out = {}
        bc = cfg.bc_config(n_bc=max(self.levels), rng_seed=child_seed(seed, 12, r))
        if cfg.estimator == "fast":
            refit = RidgeRefit(RidgeModel(K, omega, delta))
            beta_hat = ridge_estimate(y, RidgeModel(K, omega, delta))
        else:
            refit = PosteriorRefit.from_response(K, omega, delta, bc.n_samples, bc.burn_in, bc.rng_seed)
            beta_hat = refit(y.counts[None, :].astype(float), [(3, 0)])[0]
        if any(m in self.methods for m in ("bc_percentile", "percentile", "stderr")):
            sample = bootstrap_sample(y, beta_hat, K, bc, cfg.r_uq, refit, "data")
            for m in ("bc_percentile", "stderr"):
                if m in self.methods:
                    for level in self.levels:
                        band = band_from_sample(sample, basis, m, cfg.alpha, self.grid, n_bc=level)
                        out[(m, level)] = (band.covers(self.truth), band.width)
            if "percentile" in self.methods:
                band = band_from_sample(sample, basis, "percentile", cfg.alpha, self.grid)
                out[("percentile", None)] = (band.covers(self.truth), band.width)
        if "basic" in self.methods:
            sample = bootstrap_sample(y, beta_hat, K, replace(bc, n_bc=0), cfg.r_uq, refit, "model")
            band = band_from_sample(sample, basis, "basic", cfg.alpha, self.grid)
            out[("basic", None)] = (band.covers(self.truth), band.width)
        if "credible" in self.methods:
            mcfg = cfg.mcem_config()
            chain = sample_posterior(
                PosteriorModel(K, y, omega, delta), mcfg.n_samples, nnls_init(y, basis), burn_in=mcfg.burn_in, rng_seed=child_seed(seed, 13, r)
            )
            band = credible_band(chain, basis, cfg.alpha, self.grid)
            out[("credible", None)] = (band.covers(self.truth), band.width)
        return out


def _coverage_delta(config: ExperimentConfig, K, omega, basis) -> float | None:
    mode = config.coverage.get("delta_mode", "pilot")
    if mode == "fixed":
        if "delta" not in config.coverage:
            raise ConfigError("missing required field 'coverage.delta' for delta_mode 'fixed'")
        return float(config.coverage["delta"])
    if mode == "per_replicate":
        return None
    if mode != "pilot":
        raise ConfigError(f"field 'coverage.delta_mode' must be pilot, fixed or per_replicate, got {mode!r}")
    if config.delta is not None:
        return float(config.delta)
    # median over independent pilot realizations damps the Monte Carlo spread of one MCEM run
    deltas = []
    for k in range(int(config.coverage.get("n_pilot", 5))):
        y = simulate_data(config, child_seed(config.seed, 14, k))
        mcfg = replace(config.mcem_config(), beta_init=nnls_init(y, basis), rng_seed=child_seed(config.seed, 15, k))
        deltas.append(run_mcem(PosteriorModel(K, y, omega, mcfg.delta0), mcfg)[0])
    delta = float(np.median(deltas))
    logger.info("pilot delta for the coverage study: %.4g (from %s)", delta, ", ".join(f"{d:.3g}" for d in deltas))
    return delta


def _coverage_core(config: ExperimentConfig, n_replicates: int, methods, levels, workers: int):
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    if config.estimator == "full" and n_replicates > MAX_FULL_REPLICATES:
        raise ValueError(f"the full estimator is limited to {MAX_FULL_REPLICATES} replicates; use the fast path")
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method {bad[0]!r}")
    basis, K, omega = _model_parts(config)
    grid = config.grid()
    truth = np.asarray(config.build_truth()(grid), dtype=float)
    delta = _coverage_delta(config, K, omega, basis)
    job = _CoverageJob(config, K, omega.entries, grid, truth, delta, methods, tuple(sorted(set(levels))))
    results = pmap(job, range(n_replicates), workers)
    failures = [(r, res) for r, res in results if isinstance(res, str)]
    ok = [res for _, res in results if not isinstance(res, str)]
    if len(failures) > MAX_FAILURE_RATE * n_replicates:
        raise RuntimeError(f"{len(failures)} of {n_replicates} coverage replicates failed; first: {failures[0][1]}")
    if not ok:
        raise RuntimeError("every coverage replicate failed")
    reports = {}
    for key in ok[0]:
        covers = np.array([res[key][0] for res in ok], dtype=float)
        widths = np.array([res[key][1] for res in ok])
        reports[key] = CoverageReport(
            grid, covers.mean(axis=0), widths.mean(axis=0), key[0], len(ok), 1 - 2 * config.alpha, key[1], len(failures), delta
        )
    return reports


def run_coverage_study(config: ExperimentConfig, n_replicates: int, methods=None, workers: int = 1) -> dict:
    """Empirical pointwise coverage of each band type over simulated replicates.

    Returns a dict ``method -> CoverageReport``. The bias-corrected and
    standard-error bands use the configured number of bias-correction
    iterations. The prior scale is handled per ``config.coverage['delta_mode']``:
    ``pilot`` (default) takes the median MCEM estimate over
    ``coverage['n_pilot']`` (5) independent realizations, ``per_replicate`` reruns MCEM for each replicate and ``fixed`` uses
    ``config.coverage['delta']``.
    """
    methods = tuple(methods or config.coverage.get("methods") or config.methods)
    n_bc = config.bc_config().n_bc
    reports = _coverage_core(config, n_replicates, methods, [n_bc], workers)
    return {key[0]: rep for key, rep in reports.items()}


def coverage_vs_nbc(config: ExperimentConfig, nbc_values, n_replicates: int, workers: int = 1) -> list:
    """Coverage of the bias-corrected band for several iteration counts.

    One bootstrap per replicate is run to the largest count; smaller counts
    are read off its iterates, so all curves share the same resamples.
    """
    levels = sorted(set(int(v) for v in nbc_values))
    reports = _coverage_core(config, n_replicates, ("bc_percentile",), levels, workers)
    return [reports[("bc_percentile", k)] for k in levels]


def write_coverage_csv(path, reports) -> None:
    if isinstance(reports, CoverageReport):
        reports = [reports]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "coverage", "mean_width", "method", "n_rep"])
        for rep in reports:
            for s, c, w in zip(rep.grid, rep.coverage, rep.mean_width):
                writer.writerow([repr(float(s)), repr(float(c)), repr(float(w)), rep.label, rep.n_rep])


def read_coverage_csv(path) -> list:
    groups: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["s", "coverage", "mean_width", "method", "n_rep"]:
            raise ValueError(f"{path}: expected header s,coverage,mean_width,method,n_rep")
        for lineno, row in enumerate(reader, start=2):
            try:
                vals = (float(row["s"]), float(row["coverage"]), float(row["mean_width"]))
                key = (row["method"], int(row["n_rep"]))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: row {lineno}: malformed coverage row") from None
            groups.setdefault(key, []).append(vals)
    out = []
    for (label, n_rep), vals in groups.items():
        a = np.array(vals)
        method, _, nbc = label.partition("_nbc")
        out.append(CoverageReport(a[:, 0], a[:, 1], a[:, 2], method, n_rep, float("nan"), int(nbc) if nbc else None))
    return out


# ---------------------------------------------------------------------------
# Z peak


@dataclass
class ZbosonResult:
    unfolding: UnfoldingResult
    fit: CrystalBallFit | None
    dataset: ZDataset | None
    truth_scaled: np.ndarray
    smeared_estimate: np.ndarray
    synthetic: bool

    @property
    def mode(self) -> float:
        """Location of the maximum of the unfolded intensity on a fine grid."""
        u = self.unfolding
        lo, hi = u.config.true_domain
        fine = np.linspace(lo, hi, 20001)
        return float(fine[np.argmax(eval_basis(u.response.basis, fine) @ u.beta_hat)])


def run_zboson(config: ExperimentConfig, data: BinnedCounts | None = None, *, workers: int = 1, fit: bool | None = None) -> ZbosonResult:
    """Resolution fit plus unfolding of the Z peak.

    With ``data=None`` a synthetic full-window histogram is generated from
    the configured truth and kernel (the kernel then acts as ground truth).
    A full-window histogram is split binomially: the ``keep_prob`` share is
    unfolded on the configured smeared range and the rest feeds the Crystal
    Ball fit. A histogram already on the unfolding range is used as is with
    the configured kernel.
    """
    z = config.zboson or {}
    keep = float(z.get("keep_prob", 0.7))
    fit = bool(z.get("fit_cb", True)) if fit is None else fit
    truth = config.build_truth()
    dataset = None
    synthetic = data is None
    if data is None:
        dataset = simulate_zboson(
            child_seed(config.seed, 20),
            n_events=float(config.truth.get("n_events", truth.total())),
            fit_domain=config.zboson_fit_domain(),
            n_fit_bins=int(z.get("n_fit_bins", 100)),
            unfold_domain=config.smeared_domain,
            keep_prob=keep,
            kernel=config.build_kernel(),
            m_z=truth.m_z,
            width=truth.width,
        )
        y, fit_sample = dataset.unfold_sample, dataset.fit_sample
    elif data.n_bins == config.n_bins:
        y, fit_sample, fit = data, None, False
    else:
        from .simulate import binomial_split

        unfold_all, fit_sample = binomial_split(data, keep, substream(child_seed(config.seed, 21)))
        y = unfold_all.restrict(*config.smeared_domain)
    cb_fit = None
    kernel = config.build_kernel()
    timings = {}
    if fit:
        with _stage("crystal_ball_fit", timings):
            cb_fit = fit_crystal_ball(fit_sample, truth.m_z, truth.width)
        kernel = cb_fit.kernel
        # the fit sample holds 1 - keep of the events
        scaled = replace(truth, scale=cb_fit.scale * keep / (1 - keep))
    else:
        scaled = replace(truth, scale=truth.scale * keep)
    result = run_unfolding(config, y, kernel=kernel, truth=scaled, workers=workers)
    result.timings.update(timings)
    smeared = y.counts / np.diff(y.bin_edges)
    return ZbosonResult(result, cb_fit, dataset, scaled(result.grid), smeared, synthetic)

