"""Variable screening and additive-hazards model selection for
right-censored survival data at very large feature counts."""

__version__ = "0.1.0"

from .data import (
    RiskSweep,
    SurvivalDataset,
    SweepStep,
    SweepWorkspace,
    load_dataset,
    risk_set_sweep,
    save_dataset,
    standardize_columns,
)
from .errors import (
    DataError,
    HazScreenError,
    NumericalError,
    ParseError,
    SingularModelError,
    StandardizationError,
)
from .faststat import FastSummary, compute_fast, scaled_variant
from .linying import (
    SubsetModel,
    adjusted_scores,
    build_subset,
    quad_loss,
    rerecruit_scores,
    solve,
)
from .penalized import (
    CvResult,
    PenalizedFit,
    PenaltySpec,
    cv_tune,
    fit_path,
    kappa,
    lambda_grid,
    lambda_max,
    pbic,
    scad_weight,
)
from .screening import (
    IsisIteration,
    IsisTrace,
    ScreenResult,
    default_model_size,
    isis,
    minimum_model_size,
    rank_scores,
    sis,
)
from .simgen import (
    CensoringSpec,
    FeatureSpec,
    SimScenario,
    alternating_alpha,
    bench_compute_fast,
    case_correlation,
    gen_features,
    gen_outcomes,
    link_hazard,
    run_protocol,
    simulate_dataset,
)
from .rngs import philox_rng

__all__ = [name for name in dir() if not name.startswith("_")]
