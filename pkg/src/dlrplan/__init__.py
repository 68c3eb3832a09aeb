"""Robust corrective-control reserve planning for grids with dynamic line rating."""

from .affine_policy import (
    AffinePolicy,
    PolicyProcurement,
    export_policy,
    policy_action,
    procure_affine,
    select_y,
)
from .errors import (
    CapacityError,
    DlrPlanError,
    InfeasibleError,
    InputError,
    NumericalError,
    UncoveredRealizationError,
)
from .evaluation import (
    ApproachReport,
    EvaluationReport,
    ScenarioConfig,
    audit_robust_feasibility,
    evaluate_scenario,
    monte_carlo_eval,
    status_quo_cost,
    sweep_flow_limits,
    sweep_mu_sigma,
)
from .network import (
    Generator,
    GridModel,
    Line,
    PtdfMatrices,
    compute_ptdf,
    flows,
    load_grid,
)
from .robust_dispatch import (
    ProcurementResult,
    RedispatchAction,
    dc_opf,
    operate_online,
    procure_vertex_robust,
)
from .thermal import (
    ConductorParams,
    LineRatingSpec,
    WeatherSample,
    ampacity,
    heat_terms,
    rating_mw,
    rating_pu,
)
from .uncertainty import (
    EllipsoidSet,
    PolytopeSet,
    RatingForecast,
    build_ellipsoid,
    build_polytope,
    chi2_quantile,
    fit_forecast,
    load_forecast,
    truncated_deficit_expectation,
)

__version__ = "0.1.0"
