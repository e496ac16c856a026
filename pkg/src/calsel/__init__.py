"""Conditional tail-risk estimation: composite asymmetric least squares
volatility with empirical-likelihood selection of the expectile level,
one-step-ahead VaR/ES forecasting, plug-in standard errors, and backtests."""

from .cals import (
    RefitCoeffs,
    SieveConfig,
    SieveFit,
    VolatilityPath,
    asymmetric_square_loss,
    build_design,
    cals_gradient,
    composite_loss,
    fit_cals,
    preliminary_volatility,
    refit_garch,
)
from .el import (
    ElProblem,
    ElSolution,
    estimating_functions,
    grid_search_tau,
    max_el_estimate,
    neg_log_el,
    sample_expectile,
    solve_lambda,
)
from .simulate import (
    CASE_PRESETS,
    GarchParams,
    InnovationDist,
    SimulatedPath,
    simulate_linear_garch,
    true_conditional_risks,
)
from .tails import (
    DistSpec,
    c_epsilon,
    es_alpha,
    es_from_expectile,
    h_map,
    normal_spec,
    student_t_spec,
    uniform_spec,
)

__version__ = "0.1.0"
