"""Causal-effect covariability: graphs, structural models, and the random-coefficient Gaussian model."""

from .binary_example import (
    ContingencyTable,
    MixtureExampleSpec,
    SummaryMeasures,
    adjusted_risk_difference,
    conditional_odds,
    odds_ratio,
    population_table,
    summary_measures,
    unit_table,
)
from .dataset import Dataset
from .empirics import IngestError, MomentCurve, ingest, moment_curve, overlay, write_panels
from .graph import (
    CausalDag,
    GraphError,
    Path,
    Step,
    backdoor_blocked,
    backdoor_paths,
    d_separated,
    enumerate_paths,
    is_blocked,
    is_collider,
)
from .linear_model import (
    PARAM_NAMES,
    TABLE3_FULL,
    TABLE3_REDUCED,
    WEIGHT_LEVELS,
    ConditionalMoments,
    CovarianceParams,
    LinearModelParams,
    NotPositiveDefiniteError,
    balanced_levels,
    conditional_moments,
    simulate,
    uniform_levels,
)
from .mle import (
    BootstrapSummary,
    FitConfig,
    FitError,
    FitResult,
    LrtResult,
    bootstrap,
    fit,
    fit_pair,
    likelihood_ratio_test,
    log_likelihood,
    lrt_from_loglik,
)
from .scm import (
    ScmError,
    ScmSpec,
    StructuralAssignment,
    Term,
    adjusted_estimate,
    binary_example_spec,
    causal_contrast,
    intervene,
    linear_model_spec,
    sample_population,
)

__version__ = "0.1.0"
