"""Doubly, triply, and quadruply robust estimation of controlled direct effects.

The package estimates the controlled response function E[Y(a, m)], the
mean outcome when treatment is set to ``a`` and a mediator to ``m``, from
observational data with baseline confounders and treatment-induced
confounders of the mediator-outcome relation.  Contrasts of two cells
give controlled direct effects.
"""

from .data import (
    Dataset,
    EstimateResult,
    NU_DR,
    NU_IMPUTATION,
    NU_VARIANTS,
    NU_WEIGHTING,
    NuisanceValues,
    Target,
    ValidationReport,
    load_csv,
    load_roles,
    require_valid,
    validate,
)
from .errors import (
    BootstrapFailure,
    DimensionMismatch,
    EmptyStratum,
    FoldTooSmall,
    LengthMismatch,
    MissingEif,
    MrcdeError,
    NotConverged,
    RankDeficient,
    SchemaError,
    Separation,
    TruncationDominates,
    UnknownVariable,
    VariantMismatch,
    ZeroCell,
)
from .estimators import (
    ALL_ESTIMATORS,
    DR_ESTIMATORS,
    MR_ESTIMATORS,
    PLUGIN_ESTIMATORS,
    eif,
    estimate,
    estimate_dr,
    estimate_gcomp,
    estimate_mr,
    estimate_plugin,
    required_variant,
)
from .glm import GlmFit, TermSpec, build_design, fit_logistic, fit_ols, predict
from .inference import ContrastResult, bootstrap, cde_eif, contrast, wald_interval
from .nuisance import (
    Learner,
    NuisanceSpec,
    br_augment,
    cross_fit,
    fit_nuisances,
    register_learner,
)
from .simulation import (
    CONSISTENT_IN,
    DEFAULT_CONFIG,
    DiscretePopulation,
    GridResult,
    SCENARIOS,
    SimConfig,
    default_truth,
    discrete_oracle,
    generate,
    run_grid,
    spec_for,
    true_psi,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
