"""Marginal maximum likelihood for the prior scale via Monte Carlo EM."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._random import child_seed
from .inference import PosteriorChain, PosteriorModel, _penalty, sample_posterior

logger = logging.getLogger(__name__)

__all__ = ["McemConfig", "McemTrace", "DeltaClampWarning", "mstep_update", "run_mcem", "write_trace_csv"]

DELTA_MIN = 1e-15
DELTA_MAX = 1e6


class DeltaClampWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class McemConfig:
    delta0: float = 1e-5
    n_em: int = 30
    n_samples: int = 1000
    burn_in: int | None = None
    beta_init: np.ndarray | None = field(default=None, repr=False)
    rng_seed: int = 0
    early_stop_tol: float | None = None

    def __post_init__(self):
        if not self.delta0 > 0:
            raise ValueError("delta0 must be positive")
        if self.n_em < 1:
            raise ValueError("n_em must be at least 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass
class McemTrace:
    deltas: list[float] = field(default_factory=list)
    chain_means: list[np.ndarray] = field(default_factory=list)
    acceptance: list[np.ndarray] = field(default_factory=list)
    clamped: list[bool] = field(default_factory=list)

    @property
    def log_delta_steps(self) -> np.ndarray:
        return np.abs(np.diff(np.log(self.deltas)))

    def mean_acceptance(self) -> np.ndarray:
        return np.array([float(np.mean(a)) for a in self.acceptance])


def _clamp(delta: float) -> tuple[float, bool]:
    if not np.isfinite(delta) or delta > DELTA_MAX:
        return DELTA_MAX, True
    if delta < DELTA_MIN:
        return DELTA_MIN, True
    return float(delta), False


def mstep_update(chain: PosteriorChain | np.ndarray, omega_a) -> float:
    """Closed-form maximizer ``p S / (2 sum_s beta_s' Omega_A beta_s)``.

    An all-zero chain has no finite maximizer; the result is then clamped to
    the upper bound with a :class:`DeltaClampWarning`.
    """
    draws = chain.draws if isinstance(chain, PosteriorChain) else np.atleast_2d(np.asarray(chain, dtype=float))
    if draws.shape[0] == 0:
        raise ValueError("empty chain")
    s, p = draws.shape
    om = _penalty(omega_a)
    total = float(np.einsum("si,ij,sj->", draws, om, draws))
    if total <= 0:
        warnings.warn("all posterior draws are zero; delta clamped", DeltaClampWarning, stacklevel=2)
        return DELTA_MAX
    delta, clamped = _clamp(p * s / (2.0 * total))
    if clamped:
        warnings.warn(f"delta clamped to {delta:g}", DeltaClampWarning, stacklevel=2)
    return delta


def run_mcem(model: PosteriorModel, config: McemConfig) -> tuple[float, McemTrace]:
    """Iterate posterior sampling and the closed-form M-step.

    ``model.delta`` is ignored; iteration starts at ``config.delta0`` and
    each chain starts from the previous chain's mean.
    """
    p = model.n_basis
    beta_bar = np.zeros(p) if config.beta_init is None else np.asarray(config.beta_init, dtype=float)
    delta = float(config.delta0)
    trace = McemTrace(deltas=[delta])
    small_steps = 0
    for it in range(config.n_em):
        chain = sample_posterior(
            PosteriorModel(model.K, model.y, model.omega_a, delta),
            config.n_samples,
            beta_bar,
            burn_in=config.burn_in,
            rng_seed=child_seed(config.rng_seed, it),
        )
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", DeltaClampWarning)
            new_delta = mstep_update(chain, model.omega_a)
        clamped = any(issubclass(w.category, DeltaClampWarning) for w in caught)
        if clamped:
            warnings.warn(f"MCEM iteration {it}: delta clamped to {new_delta:g}", DeltaClampWarning, stacklevel=2)
        beta_bar = chain.draws.mean(axis=0)
        trace.chain_means.append(beta_bar)
        trace.acceptance.append(chain.acceptance_rates)
        trace.clamped.append(clamped)
        step = abs(np.log(new_delta) - np.log(delta))
        delta = new_delta
        trace.deltas.append(delta)
        logger.info("MCEM iteration %d: delta=%.4g (|dlog|=%.3g)", it + 1, delta, step)
        if config.early_stop_tol is not None:
            small_steps = small_steps + 1 if step < config.early_stop_tol else 0
            if small_steps >= 3:
                logger.info("MCEM stopped early after %d iterations", it + 1)
                break
    return delta, trace


def write_trace_csv(path, trace: McemTrace) -> None:
    acc = [float("nan")] + list(trace.mean_acceptance())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "delta", "mean_acceptance"])
        for i, (d, a) in enumerate(zip(trace.deltas, acc)):
            writer.writerow([i, repr(float(d)), repr(float(a))])
