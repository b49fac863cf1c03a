"""Joint regression inference from marginal summary statistics and a
reference panel, with covariance corrected for panel uncertainty and
optional post-selection adjustment."""

__version__ = "0.1.0"

from .estimator import (
    JointEstimate,
    MarginalSummary,
    joint_from_marginal,
    marginal_assoc,
    naive_cov,
    sigma2_hat,
    threshold_beta,
)
from .inference import TestReport, bh_adjust, fdp_tpp, wald_tests
from .linalg import (
    CorrelationEstimate,
    CovariateMatrix,
    commutation_matrix,
    correlation,
    diag_selector,
    solve_spd,
    standardize,
    symmetrizer,
)
from .psat import (
    ConditionalEstimate,
    PsatOptions,
    PsatResult,
    SelectionEvent,
    TruncationRegion,
    conditional_mle,
    decompose,
    psat_pipeline,
    selection_prob,
    selection_stat,
    tn_pvalue,
    truncation_region,
)
from .simulate import (
    ScenarioConfig,
    ScenarioResult,
    ar1_sigma,
    genotype_transform,
    maf_sample,
    phenotype,
    run_scenario,
    sample_gaussian,
)
from .varcorrect import VR, VSigma, sigma_mc, vr_from_vsigma, vsigma_empirical, vsigma_gaussian

__all__ = [
    "CorrelationEstimate",
    "CovariateMatrix",
    "ConditionalEstimate",
    "JointEstimate",
    "MarginalSummary",
    "PsatOptions",
    "PsatResult",
    "ScenarioConfig",
    "ScenarioResult",
    "SelectionEvent",
    "TestReport",
    "TruncationRegion",
    "VR",
    "VSigma",
    "ar1_sigma",
    "bh_adjust",
    "commutation_matrix",
    "conditional_mle",
    "correlation",
    "decompose",
    "diag_selector",
    "fdp_tpp",
    "genotype_transform",
    "joint_from_marginal",
    "maf_sample",
    "marginal_assoc",
    "naive_cov",
    "phenotype",
    "psat_pipeline",
    "run_scenario",
    "sample_gaussian",
    "selection_prob",
    "selection_stat",
    "sigma2_hat",
    "sigma_mc",
    "solve_spd",
    "standardize",
    "symmetrizer",
    "threshold_beta",
    "tn_pvalue",
    "truncation_region",
    "vr_from_vsigma",
    "vsigma_empirical",
    "vsigma_gaussian",
    "wald_tests",
]
