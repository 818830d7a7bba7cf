from msct.eval.diagnostics import (
    ConsistencyReport,
    ProbeResult,
    assumption_diagnostics,
    consistency_check,
    ignorability_note,
    positivity_summary,
    probe_balance,
)
from msct.eval.evaluate import (
    EvalResult,
    Forecaster,
    effect_pairs,
    evaluate,
    evaluate_factual,
    real_data_traces,
    treatment_awareness,
    treatment_response_curves,
)
from msct.eval.metrics import CrmseResult, crmse, rmse_per_horizon
from msct.eval.report import ExperimentReport, SeedResult, with_reserved, write_reports, write_series

__all__ = [
    "ConsistencyReport",
    "CrmseResult",
    "EvalResult",
    "ExperimentReport",
    "Forecaster",
    "ProbeResult",
    "SeedResult",
    "assumption_diagnostics",
    "consistency_check",
    "crmse",
    "effect_pairs",
    "evaluate",
    "evaluate_factual",
    "ignorability_note",
    "positivity_summary",
    "probe_balance",
    "real_data_traces",
    "rmse_per_horizon",
    "treatment_awareness",
    "treatment_response_curves",
    "with_reserved",
    "write_reports",
    "write_series",
]
