"""Hierarchical meta-analysis that treats study posteriors as observations.

Study-level posteriors ("beliefs") enter a hierarchical model through
their expected likelihood under the population distribution. The package
provides exact grid updates, a joint sampler with importance-resampling
refinement, a rejection-ABC MA(2) study, and classical baselines.
"""
from .belief import (
    Dirac,
    FixedBandwidth,
    Gaussian,
    GridPmf,
    Kde,
    SampleSet,
    ScottsRule,
    SoftBernoulli,
    density,
    draw,
    fit_gaussian,
    fit_kde,
    log_density,
)
from .errors import (
    BudgetExhausted,
    InputError,
    MbaError,
    NonFiniteEstimate,
    NumericError,
    WeightCollapse,
)
from .meta_model import (
    BetaBernoulli,
    BetaBernoulliPhi,
    DrawCache,
    DualEstimate,
    GaussianGammaMeans,
    GaussianNiw,
    GaussianPhi,
    McBudget,
    dual_estimator_check,
    expected_lik,
    log_cond,
    log_expected_lik,
    log_prior,
    spec_from_dict,
    spec_to_dict,
)
from .updater import (
    Grid,
    Message,
    PhiGrid,
    bernoulli_soft_curve,
    combine_at_leaf,
    combine_at_root,
    global_update,
    local_update,
    message_leaf_to_root,
    message_root_to_leaf,
)
from .sampler import (
    JointSamples,
    McmcConfig,
    WeightedDraws,
    diagnostics,
    sample_global,
    sample_joint,
    sample_vector,
    sir_refine,
    split_rhat,
)
from .abc_ma2 import (
    AbcConfig,
    AbcResult,
    Ma2Params,
    abc_rejection,
    autocov,
    generate_effects,
    ma2_summaries,
    make_ma2_simulator,
    sample_triangle_prior,
    simulate_ma2,
)
from .baselines import (
    StudyEstimate,
    bootstrap_cov,
    css_estimate,
    fema_conjugate,
    fema_fit,
    naive_fit,
    rema_fit,
    rema_grid_posterior,
)

__version__ = "0.1.0"
