"""Estimation and inference for conditional marginal effects along a moderator.

The package estimates how a treatment effect varies with a single moderator,
from a linear interaction baseline up to cross-fitted double/debiased machine
learning, with pointwise and uniform confidence bands and a simulation lab
for benchmarking the estimators against known truths.
"""

from .classic_estimators import (
    BinningResult,
    CmeCurve,
    EffectiveSampleTooSmall,
    EmptyBin,
    LinearCmeResult,
    attach_bands,
    binning_cme,
    default_grid,
    effect_modification,
    kernel_cme,
    linear_cme,
)
from .dataset import (
    DataError,
    Dataset,
    EmptyAfterDrop,
    EmptyAfterTrim,
    FoldAssignment,
    KTooLarge,
    MissingColumn,
    ParseError,
    TrimSpec,
    assign_folds,
    ingest_csv,
    make_dataset,
    subset,
    trim,
    write_csv,
)
from .dml_engine import (
    CrossfitResult,
    DegenerateTreatmentResiduals,
    DmlResult,
    FoldMissingTreatmentArm,
    aipw_lasso_cme,
    crossfit_nuisances,
    dml_binary_cme,
    dml_continuous_cme,
    po_lasso_cme,
)
from .inference import (
    BandResult,
    BootstrapDegenerate,
    HypothesisTests,
    ModerationTest,
    PointTest,
    RegionTest,
    SingularJacobian,
    hypothesis_tests,
    multiplier_band,
    nonparam_bootstrap_band,
    sandwich_band,
)
from .learners import (
    DegenerateTarget,
    FittedLearner,
    LearnerSpec,
    grid_search_cv,
    oof_loss,
)
from .learners import fit as fit_learner
from .numerics import (
    DegenerateSample,
    DesignMatrix,
    LassoPath,
    LinearFit,
    NonConvergence,
    SeparationDetected,
    SingularDesign,
    SplineBasis,
    bspline_basis,
    expand_design,
    kde_gaussian,
    lasso_cd,
    logit_irls,
    make_spline_basis,
    post_selection_refit,
    wls,
)
from .rng import derive_seed, make_rng, splitmix64
from .signals import (
    CmetSignals,
    NoOverlapInCell,
    NuisanceFit,
    OrthogonalityCheck,
    SignalVector,
    UnclippedPropensity,
    aipw_signal,
    cmet_signals,
    clip_propensity,
    gateaux_orthogonality_check,
    ipw_signal,
    marginal_propensity,
    outcome_signal,
    sdim_oracle,
)
from .simlab import (
    DGP_IDS,
    ESTIMATORS,
    BenchRow,
    DGPSpec,
    SimData,
    cme_from_table,
    generate,
    run_bench,
    true_nuisance_fit,
    weighted_rmse,
    write_bench_csv,
)
from .smoothing import (
    InsufficientLocalData,
    ProjectorFit,
    SmootherSpec,
    cv_span,
    project_residuals,
    project_signal,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # dataset
    "Dataset",
    "FoldAssignment",
    "TrimSpec",
    "make_dataset",
    "subset",
    "ingest_csv",
    "write_csv",
    "assign_folds",
    "trim",
    "DataError",
    "MissingColumn",
    "ParseError",
    "EmptyAfterDrop",
    "KTooLarge",
    "EmptyAfterTrim",
    # numerics
    "LinearFit",
    "LassoPath",
    "SplineBasis",
    "DesignMatrix",
    "wls",
    "logit_irls",
    "lasso_cd",
    "post_selection_refit",
    "bspline_basis",
    "make_spline_basis",
    "expand_design",
    "kde_gaussian",
    "SingularDesign",
    "NonConvergence",
    "DegenerateSample",
    "SeparationDetected",
    # classic estimators
    "CmeCurve",
    "LinearCmeResult",
    "BinningResult",
    "linear_cme",
    "effect_modification",
    "binning_cme",
    "kernel_cme",
    "EmptyBin",
    "EffectiveSampleTooSmall",
    "default_grid",
    "attach_bands",
    # signals
    "NuisanceFit",
    "SignalVector",
    "CmetSignals",
    "OrthogonalityCheck",
    "clip_propensity",
    "aipw_signal",
    "ipw_signal",
    "outcome_signal",
    "cmet_signals",
    "marginal_propensity",
    "sdim_oracle",
    "gateaux_orthogonality_check",
    "UnclippedPropensity",
    "NoOverlapInCell",
    # learners
    "LearnerSpec",
    "FittedLearner",
    "fit_learner",
    "grid_search_cv",
    "oof_loss",
    "DegenerateTarget",
    # smoothing
    "SmootherSpec",
    "ProjectorFit",
    "project_signal",
    "project_residuals",
    "cv_span",
    "InsufficientLocalData",
    # dml engine
    "CrossfitResult",
    "DmlResult",
    "crossfit_nuisances",
    "dml_binary_cme",
    "dml_continuous_cme",
    "po_lasso_cme",
    "aipw_lasso_cme",
    "FoldMissingTreatmentArm",
    "DegenerateTreatmentResiduals",
    # inference
    "BandResult",
    "PointTest",
    "ModerationTest",
    "RegionTest",
    "HypothesisTests",
    "sandwich_band",
    "multiplier_band",
    "nonparam_bootstrap_band",
    "hypothesis_tests",
    "SingularJacobian",
    "BootstrapDegenerate",
    # simulation lab
    "DGP_IDS",
    "ESTIMATORS",
    "DGPSpec",
    "SimData",
    "BenchRow",
    "generate",
    "true_nuisance_fit",
    "cme_from_table",
    "weighted_rmse",
    "run_bench",
    "write_bench_csv",
    # rng
    "splitmix64",
    "derive_seed",
    "make_rng",
]
