"""Empirical-Bayes unfolding of Poisson-smeared spectra with bias-corrected bootstrap bands."""

__version__ = "0.1.0"

from .empirical_bayes import McemConfig, McemTrace, mstep_update, run_mcem  # noqa: E402
from .estimators import PoissonUnfolder, RidgeUnfolder  # noqa: E402
from .fastpath import RidgeModel, fast_bc_percentile_band, ridge_estimate  # noqa: E402
from .forward_model import (  # noqa: E402
    CrystalBallKernel,
    Efficiency,
    GaussianKernel,
    IdentityKernel,
    ResponseMatrix,
    TabulatedKernel,
    build_response_matrix,
    kernel_density,
    smeared_mean,
)
from .harness import (  # noqa: E402
    CoverageReport,
    ExperimentConfig,
    coverage_vs_nbc,
    run_coverage_study,
    run_unfolding,
    run_zboson,
)
from .inference import (  # noqa: E402
    PosteriorChain,
    PosteriorModel,
    log_likelihood,
    log_posterior,
    log_prior,
    nnls_init,
    posterior_mean,
    sample_posterior,
)
from .simulate import (  # noqa: E402
    BinnedCounts,
    BreitWignerIntensity,
    GaussianMixtureIntensity,
    bin_points,
    binomial_split,
    sample_true_points,
    thin_and_smear,
)
from .splines import (  # noqa: E402
    PenaltyMatrix,
    SplineBasis,
    aristotelian_matrix,
    build_basis,
    curvature_matrix,
    eval_basis,
    eval_intensity,
)
from .uncertainty import (  # noqa: E402
    BiasCorrectionConfig,
    IntervalBand,
    basic_band,
    bc_percentile_band,
    bias_correct,
    credible_band,
    percentile_band,
    stderr_band,
)
from .zboson import fit_crystal_ball  # noqa: E402

__all__ = [
    "aristotelian_matrix",
    "basic_band",
    "bc_percentile_band",
    "bias_correct",
    "BiasCorrectionConfig",
    "bin_points",
    "BinnedCounts",
    "binomial_split",
    "BreitWignerIntensity",
    "build_basis",
    "build_response_matrix",
    "coverage_vs_nbc",
    "CoverageReport",
    "credible_band",
    "CrystalBallKernel",
    "curvature_matrix",
    "Efficiency",
    "eval_basis",
    "eval_intensity",
    "ExperimentConfig",
    "fast_bc_percentile_band",
    "fit_crystal_ball",
    "GaussianKernel",
    "GaussianMixtureIntensity",
    "IdentityKernel",
    "IntervalBand",
    "kernel_density",
    "log_likelihood",
    "log_posterior",
    "log_prior",
    "McemConfig",
    "McemTrace",
    "mstep_update",
    "nnls_init",
    "PenaltyMatrix",
    "percentile_band",
    "PoissonUnfolder",
    "posterior_mean",
    "PosteriorChain",
    "PosteriorModel",
    "ResponseMatrix",
    "ridge_estimate",
    "RidgeModel",
    "RidgeUnfolder",
    "run_coverage_study",
    "run_mcem",
    "run_unfolding",
    "run_zboson",
    "sample_posterior",
    "sample_true_points",
    "smeared_mean",
    "SplineBasis",
    "stderr_band",
    "TabulatedKernel",
    "thin_and_smear",
]
