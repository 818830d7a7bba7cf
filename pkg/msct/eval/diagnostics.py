"""Checks of the identification assumptions and of representation balance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import statsmodels.api as sm
from statsmodels.tools.sm_exceptions import PerfectSeparationError

from msct.baselines.msm import PROB_FLOOR, fit_propensity
from msct.data import make_batch
from msct.dgp.benchmark import Benchmark
from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import DgpOracle, TimeSeriesUnit
from msct.errors import DatasetError, UsageError
from msct.logging_config import logger
from msct.models.msct import MsctModel
from msct.training.batching import precompute_representations


@dataclass
class ProbeResult:
    accuracy: float
    balanced_accuracy: float
    majority_rate: float  # accuracy of always predicting the most common class
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "balanced_accuracy": self.balanced_accuracy,
            "majority_rate": self.majority_rate,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }


def _fit_probe(features: np.ndarray, target: np.ndarray):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            return sm.MNLogit(target, features).fit(disp=0, maxiter=200)
        except (PerfectSeparationError, np.linalg.LinAlgError):
            logger.debug("probe: separable representation, fitting with an L1 penalty")
            return sm.MNLogit(target, features).fit_regularized(alpha=1e-2, disp=0)


def probe_balance(
    model: MsctModel,
    units: Sequence[TimeSeriesUnit],
    train_fraction: float = 0.5,
    seed: int = 0,
) -> ProbeResult:
    """Held-out accuracy of a logistic probe predicting the factual treatment from frozen Φ.

    Units are split (not positions), so the probe never sees a test sequence.
    A balanced representation leaves the probe near the majority rate.
    """
    if not 0.0 < train_fraction < 1.0:
        raise UsageError("train_fraction must lie in (0, 1)")
    if len(units) < 2:
        raise UsageError("the probe needs at least two units")
    batch = make_batch(units, model.normalizer, model.cfg.k)
    phi = precompute_representations(batch, model).phi
    target = batch.classes[:, 1 : phi.shape[1] + 1]

    order = np.random.default_rng([seed, 3]).permutation(len(units))
    cut = min(len(units) - 1, max(1, int(round(len(units) * train_fraction))))
    fit_rows, test_rows = order[:cut], order[cut:]
    x_fit = phi[fit_rows].reshape(-1, phi.shape[-1])
    x_test = phi[test_rows].reshape(-1, phi.shape[-1])
    y_fit = target[fit_rows].reshape(-1)
    y_test = target[test_rows].reshape(-1)

    mean, std = x_fit.mean(axis=0), x_fit.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x_fit = sm.add_constant((x_fit - mean) / std, has_constant="add")
    x_test = sm.add_constant((x_test - mean) / std, has_constant="add")

    labels, counts = np.unique(y_fit, return_counts=True)
    if len(labels) == 1:
        predicted = np.full_like(y_test, labels[0])
    else:
        result = _fit_probe(x_fit, np.searchsorted(labels, y_fit))
        predicted = labels[np.asarray(result.predict(x_test)).argmax(axis=1)]

    recalls = [np.mean(predicted[y_test == c] == c) for c in np.unique(y_test)]
    probe = ProbeResult(
        accuracy=float(np.mean(predicted == y_test)),
        balanced_accuracy=float(np.mean(recalls)),
        majority_rate=float(np.mean(y_test == labels[counts.argmax()])),
        n_train=len(y_fit),
        n_test=len(y_test),
    )
    logger.info(
        "Balance probe: accuracy %.4f (majority %.4f), balanced accuracy %.4f",
        probe.accuracy,
        probe.majority_rate,
        probe.balanced_accuracy,
    )
    return probe


@dataclass
class ConsistencyReport:
    checked: int
    mismatches: int
    max_abs_error: float

    @property
    def holds(self) -> bool:
        return self.checked > 0 and self.mismatches == 0


def consistency_check(
    benchmark: Benchmark,
    split: str = "test",
    max_units: int | None = 10,
    anchor_stride: int = 1,
    atol: float = 1e-9,
) -> ConsistencyReport:
    """Replaying the observed crashes through the oracle must reproduce the observed speeds."""
    cfg = benchmark.dgp_config
    if cfg is None or "threshold" not in benchmark.meta:
        raise DatasetError("consistency can only be checked against a synthetic benchmark")
    oracle = DgpOracle(cfg, float(benchmark.meta["threshold"]))
    units = benchmark.units(split)[:max_units]
    checked, mismatches, worst = 0, 0, 0.0
    for stored in units:
        unit = oracle.unit(stored.index)
        if not np.allclose(unit.y, stored.y, atol=atol):
            raise DatasetError(f"unit {stored.index} does not regenerate from the stored config")
        for anchor in list(cfg.anchors)[::anchor_stride]:
            factual = InterventionStrategy(tuple(unit.t[anchor + 1 : anchor + 1 + cfg.tau_max]))
            branch = oracle.counterfactuals(unit, anchor, [factual])[0]
            error = float(np.max(np.abs(branch - unit.y[anchor + 1 : anchor + 1 + len(branch)])))
            worst = max(worst, error)
            mismatches += error > atol
            checked += 1
    report = ConsistencyReport(checked, int(mismatches), worst)
    level = logger.info if report.holds else logger.warning
    level("Consistency: %d/%d factual branches reproduce (max error %.2e)", checked - mismatches, checked, worst)
    return report


def positivity_summary(units: Sequence[TimeSeriesUnit], window: int = 5, floor: float = PROB_FLOOR) -> dict:
    """Range of fitted history-conditioned crash propensities and the share clamped at the floor."""
    propensity = fit_propensity(units, "history", window, floor)
    probs = propensity.predict_proba(units)
    clamped = (probs <= floor) | (probs >= 1.0 - floor)
    summary = {
        "min": float(probs.min()),
        "max": float(probs.max()),
        "mean": float(probs.mean()),
        "clamped_fraction": float(clamped.mean()),
        "separated": bool(propensity.separated),
        "window": window,
        "floor": floor,
    }
    if summary["clamped_fraction"] > 0:
        logger.warning("Positivity: %.1f%% of steps have a near-deterministic propensity", 100 * summary["clamped_fraction"])
    return summary


def ignorability_note(benchmark: Benchmark) -> str:
    if benchmark.kind == "synthetic":
        note = (
            "sequential ignorability holds by construction: crashes depend only on observed covariates "
            "and assignment noise independent of the outcome noise"
        )
    else:
        note = "sequential ignorability is untestable on observational data and is assumed"
    logger.info("Ignorability: %s", note)
    return note


def assumption_diagnostics(benchmark: Benchmark, split: str = "test", window: int = 5) -> dict:
    """Consistency (synthetic only), positivity and ignorability in one JSON-able dict."""
    out: dict = {"ignorability": ignorability_note(benchmark)}
    out["positivity"] = positivity_summary(benchmark.units("train"), window)
    if benchmark.kind == "synthetic":
        report = consistency_check(benchmark, split)
        out["consistency"] = {"checked": report.checked, "mismatches": report.mismatches, "max_abs_error": report.max_abs_error}
    return out
