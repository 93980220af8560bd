"""bregfit: estimation of unnormalized statistical models.

A family of estimators (noise-contrastive estimation and its relatives,
ratio matching, score matching, stagewise boosting of product-of-experts
models) implemented as minimization of Bregman-divergence cost functions
over unnormalized parametric models.
"""

from .bregman import (
    BUILTIN_GENERATORS,
    BUILTIN_SPAIRS,
    ConvexGenerator,
    LogSPair,
    SPair,
    SPairValidation,
    bregman_divergence,
    get_s_pair,
    logit_boost_transform,
    s_pair_from_generator,
    sigmoid,
    softplus,
    validate_s_pair,
)
from .models import (
    BernoulliMixtureNoise,
    BernoulliNoise,
    BoltzmannModel,
    BoltzmannParams,
    DiagonalGaussianModel,
    GaussianNoise,
    IcaPoeModel,
    IcaPoeParams,
    NoiseModel,
    UnnormalizedModel,
    boltzmann_exact_log_partition,
    boltzmann_log_unnorm,
    fit_bernoulli_mixture,
    gaussian_noise_from_sample,
    ica_poe_log_unnorm,
    ica_true_log_pdf,
    pseudolikelihood_objective,
)
from .objectives import (
    CapabilityError,
    PerturbationSpec,
    StageFailureError,
    boosting_fit,
    data_dependent_noise_objective,
    direct_matching_objective,
    fix_coordinates,
    general_score_function_objective,
    ica_poe_family,
    nce_family_objective,
    ratio_matching_objective,
    score_matching_objective,
    small_noise_expansion_check,
)
from .optimize import (
    Objective,
    OptimConfig,
    OptimResult,
    finite_diff_grad,
    minimize,
)
from .sampling import (
    EnumerationLimitError,
    RngStream,
    enumerate_states,
    laplace_unit_variance,
    laplace_unit_variance_cdf,
    sample_discrete_exact,
    sample_ica,
)
from .experiments import (
    Fig1Config,
    Fig1Result,
    Fig2Config,
    Fig2Result,
    TrialRecord,
    param_error_boltzmann,
    poe_alignment,
    poe_alignment_error,
    run_fig1,
    run_fig2,
)
from .cli import cli_main

__version__ = "0.1.0"
