"""Multi-stage recursive Bayesian inference for inhomogeneous Poisson point
processes observed through compact windows.

The intensity is log-linear in raster covariates. Fitting splits into a
cheap first stage on presence/background labels, a parallel quadrature
pass over the retained draws, and a second stage that recycles the first
as its proposal; a single-stage sampler serves as the reference. On top
of the samplers sit abundance prediction, thinning-based simulation,
chain and point-pattern diagnostics, a replication harness, and a batch
command line (``pprb``). :class:`MultiStageIPP` wraps the pipeline in a
fit/predict estimator.
"""

from .diagnostics import (
    EssReport,
    LFunctionCurve,
    PpcResult,
    ess,
    l_function,
    ppc_l_function,
    seconds_per_ess,
)
from .domain import (
    CovariateStack,
    GridSpec,
    PointPattern,
    WindowSet,
    build_grid,
    classify_points,
    covariates_at,
    window_cell_mask,
)
from .errors import (
    InsufficientPointsError,
    NotPositiveDefiniteError,
    OutOfDomainError,
    PprbError,
    QuadratureOverflowError,
    SelectionFailureError,
    SeparationError,
    SingularDesignError,
    StaleCacheError,
)
from .estimator import MultiStageIPP
from .first_stage import (
    KIND_CHAIN,
    KIND_GAUSSIAN,
    BtDesign,
    ElmBasis,
    TransientSample,
    build_bt_design,
    default_background_size,
    elm_build,
    elm_select,
    gelu,
    generate_background,
    irls_fit,
    pg_gibbs,
    run_first_stage,
    sample_gaussian_approx,
)
from .likelihood import (
    Coefficients,
    QuadratureCache,
    build_cache,
    log_intensity,
    loglik_complete,
    loglik_conditional,
    loglik_windowed,
    logpmf_n,
    quadrature_q,
)
from .multistage import (
    DEFAULT_PRIOR_A,
    DEFAULT_PRIOR_B,
    STRATEGIES,
    IntermediateCache,
    PosteriorDraws,
    gibbs_zeta,
    precompute,
    run_pipeline,
    second_stage_glma,
    second_stage_glme,
    second_stage_pprb,
    single_stage_baseline,
)
from .polya_gamma import pg_draw, pg_draw_batch
from .prediction import (
    AbundanceDraws,
    draw_n0,
    lewis_shedler,
    mean_count_raster,
    posterior_point_simulation,
)
from .simstudy import (
    DEFAULT_WINDOW_FRACTIONS,
    SimulatedTruth,
    StudyConfig,
    gen_covariates,
    run_study,
    simulate_truth,
    write_study_report,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "PprbError",
    "OutOfDomainError",
    "QuadratureOverflowError",
    "StaleCacheError",
    "SeparationError",
    "SingularDesignError",
    "NotPositiveDefiniteError",
    "SelectionFailureError",
    "InsufficientPointsError",
    # geometry and data
    "GridSpec",
    "CovariateStack",
    "WindowSet",
    "PointPattern",
    "build_grid",
    "classify_points",
    "covariates_at",
    "window_cell_mask",
    # likelihood
    "Coefficients",
    "QuadratureCache",
    "log_intensity",
    "quadrature_q",
    "build_cache",
    "loglik_complete",
    "loglik_conditional",
    "loglik_windowed",
    "logpmf_n",
    # first stage
    "KIND_CHAIN",
    "KIND_GAUSSIAN",
    "BtDesign",
    "TransientSample",
    "ElmBasis",
    "gelu",
    "generate_background",
    "default_background_size",
    "build_bt_design",
    "irls_fit",
    "sample_gaussian_approx",
    "pg_gibbs",
    "pg_draw",
    "pg_draw_batch",
    "elm_build",
    "elm_select",
    "run_first_stage",
    # multi-stage sampling
    "STRATEGIES",
    "DEFAULT_PRIOR_A",
    "DEFAULT_PRIOR_B",
    "IntermediateCache",
    "PosteriorDraws",
    "precompute",
    "gibbs_zeta",
    "second_stage_pprb",
    "second_stage_glma",
    "second_stage_glme",
    "single_stage_baseline",
    "run_pipeline",
    # prediction and simulation
    "AbundanceDraws",
    "draw_n0",
    "lewis_shedler",
    "posterior_point_simulation",
    "mean_count_raster",
    # diagnostics
    "ess",
    "EssReport",
    "seconds_per_ess",
    "LFunctionCurve",
    "l_function",
    "PpcResult",
    "ppc_l_function",
    # simulation study
    "StudyConfig",
    "SimulatedTruth",
    "DEFAULT_WINDOW_FRACTIONS",
    "gen_covariates",
    "simulate_truth",
    "run_study",
    "write_study_report",
    # estimator
    "MultiStageIPP",
]
