"""Minimax-regret aggregation of site-level CATE estimators."""

from ._cate_forge import (
    AggregationResult,
    CateForgeError,
    Diagnostics,
    InvalidInputError,
    NumericalError,
    Predictor,
    WeightSolution,
    ensemble_predictions,
    estimate_gamma,
    fit_cate,
    grid_oracle,
    kkt_residual,
    per_site_regret,
    project_to_simplex,
    regret_weights,
    relative_risk_weights,
    risk_2site_weights,
    run_study,
    solve_regret_qp,
    solve_relative_risk_qp,
)

__all__ = [
    "AggregationResult",
    "CateForgeError",
    "Diagnostics",
    "InvalidInputError",
    "NumericalError",
    "Predictor",
    "WeightSolution",
    "ensemble_predictions",
    "estimate_gamma",
    "fit_cate",
    "grid_oracle",
    "kkt_residual",
    "per_site_regret",
    "project_to_simplex",
    "regret_weights",
    "relative_risk_weights",
    "risk_2site_weights",
    "run_study",
    "solve_regret_qp",
    "solve_relative_risk_qp",
]
