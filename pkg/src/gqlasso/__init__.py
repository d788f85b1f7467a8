"""Adaptive group LASSO quantile regression.

Pilot quantile fits and adaptive weights, an ADMM solver for the penalized
check loss, an optimality-condition checker, information-criterion tuning,
the grouped simulation design and a replicated selection experiment.
"""
__version__ = "0.1.0"

from .kkt import KktReport, kkt_check
from .model import (
    DesignDiagnostics,
    GroupedCoefficients,
    GroupedDesign,
    InputError,
    PenaltySpec,
    active_set,
    check_loss,
    design_diagnostics,
    penalized_objective,
    quantile_objective,
)
from .montecarlo import ReplicationOutcome, SelectionSummary, run_replication, run_scenario, table1_report
from .penalized import AdmmOptions, PenalizedFit, fit_ag_lasso_ls, fit_ag_lasso_q, prox_check, prox_group
from .pilot import PilotFit, compute_weights, fit_pilot, fit_quantile, fit_quantile_lp
from .simgen import ErrorLaw, ScenarioSpec, gen_design, gen_errors, gen_response, generate, true_beta
from .tuning import LambdaGrid, auto_grid, build_grid, lambda_max, select_lambda

__all__ = [
    "AdmmOptions", "DesignDiagnostics", "ErrorLaw", "GroupedCoefficients", "GroupedDesign",
    "InputError", "KktReport", "LambdaGrid", "PenalizedFit", "PenaltySpec", "PilotFit",
    "ReplicationOutcome", "ScenarioSpec", "SelectionSummary", "active_set", "auto_grid", "build_grid",
    "check_loss", "compute_weights", "design_diagnostics", "fit_ag_lasso_ls", "fit_ag_lasso_q",
    "fit_pilot", "fit_quantile", "fit_quantile_lp", "gen_design", "gen_errors", "gen_response",
    "generate", "kkt_check", "lambda_max", "penalized_objective", "prox_check", "prox_group",
    "quantile_objective", "run_replication", "run_scenario", "select_lambda", "table1_report",
    "true_beta",
]
