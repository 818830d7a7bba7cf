"""Model-level evaluation on benchmark splits and plot-data extraction."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from msct.dgp.benchmark import Benchmark
from msct.dgp.config import InterventionStrategy, sliding_strategies
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import DatasetError, UsageError
from msct.eval.metrics import CrmseResult, crmse, rmse_per_horizon
from msct.logging_config import logger


class Forecaster(Protocol):
    def rollout_unit(
        self, unit: TimeSeriesUnit, anchors: Sequence[int], strategies: Sequence[InterventionStrategy]
    ) -> np.ndarray: ...

    def predict_factual(self, unit: TimeSeriesUnit, anchors: Sequence[int], horizon: int) -> np.ndarray: ...


@dataclass
class EvalResult:
    rmse: np.ndarray  # horizons 1 .. tau_max + 1
    crmse: CrmseResult | None  # horizons 1 .. tau_max
    records: int


def factual_anchors(seq_len: int, tau_max: int, stride: int = 1) -> list[int]:
    return list(range(1, seq_len - tau_max - 1))[::stride]


def _truth_rows(branches: dict[str, np.ndarray], labels: list[str], horizons: int) -> np.ndarray:
    missing = np.full(horizons, np.nan)
    return np.stack([np.asarray(branches.get(label, missing))[:horizons] for label in labels])


def effect_pairs(values: np.ndarray, labels: list[str], tau_max: int) -> np.ndarray:
    """``(A, S, H)`` trajectories -> ``(A * tau_max, 2, tau_max)`` crash/no-crash pairs.

    Strategy ``crash@k`` is paired with ``none``; horizons before the crash
    can carry no effect and are masked out.
    """
    none = labels.index("none")
    pairs = []
    for k in range(tau_max):
        label = f"crash@{k}"
        if label not in labels:
            continue
        pair = np.stack([values[:, labels.index(label), :tau_max], values[:, none, :tau_max]], axis=1).copy()
        pair[:, :, :k] = np.nan
        pairs.append(pair)
    return np.concatenate(pairs, axis=0)


def evaluate(forecaster: Forecaster, benchmark: Benchmark, split: str = "test", anchor_stride: int = 1) -> EvalResult:
    """Pooled counterfactual RMSE and CRMSE over every unit, anchor and strategy."""
    units = benchmark.units(split)
    expansions = benchmark.counterfactuals.get(split) or []
    if not any(expansions):
        raise DatasetError(f"split '{split}' has no counterfactual expansions; evaluate factually instead")
    tau_max = benchmark.tau_max
    horizons = tau_max + 1
    strategies = sliding_strategies(tau_max)
    labels = [s.label for s in strategies]

    preds, truths, pred_pairs, true_pairs = [], [], [], []
    for unit, cf in zip(units, expansions):
        anchors = sorted(cf)[::anchor_stride]
        if not anchors:
            continue
        pred = forecaster.rollout_unit(unit, anchors, strategies)
        true = np.stack([_truth_rows(cf[a], labels, horizons) for a in anchors])
        preds.append(pred.reshape(-1, horizons))
        truths.append(true.reshape(-1, horizons))
        pred_pairs.append(effect_pairs(pred, labels, tau_max))
        true_pairs.append(effect_pairs(true, labels, tau_max))
    if not preds:
        raise UsageError(f"no anchors to evaluate in split '{split}'")

    rmse = rmse_per_horizon(np.concatenate(preds), np.concatenate(truths))
    effects = crmse(np.concatenate(pred_pairs), np.concatenate(true_pairs))
    if effects.skipped:
        logger.warning("CRMSE skipped %d records with a missing branch", effects.skipped)
    return EvalResult(rmse, effects, records=sum(len(p) for p in preds))


def evaluate_factual(
    forecaster: Forecaster,
    units: Sequence[TimeSeriesUnit],
    tau_max: int,
    anchor_stride: int = 1,
) -> EvalResult:
    """RMSE per horizon against observed outcomes under the observed treatments."""
    horizons = tau_max + 1
    preds, truths = [], []
    for unit in units:
        anchors = factual_anchors(unit.seq_len, tau_max, anchor_stride)
        if not anchors:
            continue
        preds.append(forecaster.predict_factual(unit, anchors, horizons))
        truths.append(np.stack([unit.y[a + 1 : a + horizons + 1] for a in anchors]))
    if not preds:
        raise UsageError("no anchors to evaluate")
    return EvalResult(rmse_per_horizon(np.concatenate(preds), np.concatenate(truths)), None, sum(len(p) for p in preds))


def treatment_awareness(
    forecaster: Forecaster,
    units: Sequence[TimeSeriesUnit],
    tau_max: int,
    anchor_stride: int = 1,
) -> float:
    """Share of anchors whose horizon-1 prediction is lower under an immediate crash."""
    strategies = sliding_strategies(tau_max)
    labels = [s.label for s in strategies]
    crash, none = labels.index("crash@0"), labels.index("none")
    lower = []
    for unit in units:
        anchors = factual_anchors(unit.seq_len, tau_max, anchor_stride)
        if anchors:
            pred = forecaster.rollout_unit(unit, anchors, strategies)
            lower.append(pred[:, crash, 0] < pred[:, none, 0])
    return float(np.mean(np.concatenate(lower))) if lower else float("nan")


def treatment_response_curves(
    forecaster: Forecaster,
    benchmark: Benchmark,
    split: str = "test",
    unit_index: int = 0,
    anchors: Sequence[int] | None = None,
) -> list[dict]:
    """Crash vs. no-crash trajectories (predicted and true) per anchor of one unit."""
    unit = benchmark.units(split)[unit_index]
    cf = (benchmark.counterfactuals.get(split) or [{}] * (unit_index + 1))[unit_index]
    tau_max = benchmark.tau_max
    horizons = tau_max + 1
    anchors = list(anchors) if anchors is not None else sorted(cf) or factual_anchors(unit.seq_len, tau_max)
    strategies = sliding_strategies(tau_max)
    labels = [s.label for s in strategies]
    pred = forecaster.rollout_unit(unit, anchors, strategies)
    curves = []
    for i, anchor in enumerate(anchors):
        truth = _truth_rows(cf.get(anchor, {}), labels, horizons)
        curves.append(
            {
                "unit": unit_index,
                "anchor": anchor,
                "horizon": list(range(1, horizons + 1)),
                "pred_crash": pred[i, labels.index("crash@0")].tolist(),
                "pred_none": pred[i, labels.index("none")].tolist(),
                "true_crash": [None if np.isnan(v) else float(v) for v in truth[labels.index("crash@0")]],
                "true_none": [None if np.isnan(v) else float(v) for v in truth[labels.index("none")]],
            }
        )
    return curves


def real_data_traces(
    forecaster: Forecaster,
    units: Sequence[TimeSeriesUnit],
    indices: Sequence[int],
    tau_max: int,
    horizon: int = 1,
) -> list[dict]:
    """Observed vs. predicted speed at a fixed horizon along whole sequences."""
    traces = []
    for index in indices:
        unit = units[index]
        anchors = factual_anchors(unit.seq_len, tau_max)
        pred = forecaster.predict_factual(unit, anchors, horizon)[:, horizon - 1]
        steps = [a + horizon for a in anchors]
        traces.append(
            {
                "unit": index,
                "step": steps,
                "true": unit.y[steps].tolist(),
                "pred": pred.tolist(),
                "crash": unit.t_type[steps].tolist(),
            }
        )
    return traces
