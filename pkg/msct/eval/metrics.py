"""Per-horizon RMSE and the RMSE of estimated crash effects.

Both metrics treat NaN entries as missing: a horizon with no finite pair is
reported as NaN (absent), never as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msct.errors import ShapeError


def _pooled_rmse(errors: np.ndarray) -> np.ndarray:
    """Root mean square over every axis but the last, ignoring NaN."""
    flat = errors.reshape(-1, errors.shape[-1])
    finite = np.isfinite(flat)
    counts = finite.sum(axis=0)
    sums = np.where(finite, flat**2, 0.0).sum(axis=0)
    out = np.full(flat.shape[1], np.nan)
    np.sqrt(sums / np.maximum(counts, 1), out=out, where=counts > 0)
    return out


def rmse_per_horizon(predictions, truths) -> np.ndarray:
    """RMSE per horizon (last axis), pooled over units, anchors and strategies."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or predictions.ndim < 1:
        raise ShapeError("rmse_per_horizon", predictions.shape, truths.shape)
    if predictions.ndim == 1:
        predictions, truths = predictions[None], truths[None]
    return _pooled_rmse(predictions - truths)


@dataclass
class CrmseResult:
    values: np.ndarray  # per horizon, NaN when no record covers it
    used: int
    skipped: int  # records missing a branch

    @property
    def coverage(self) -> float:
        total = self.used + self.skipped
        return self.used / total if total else float("nan")


def crmse(pred_branches, true_branches) -> CrmseResult:
    """Effect-estimation RMSE per horizon.

    Both inputs are ``(R, 2, H)``: branch 0 is the crash trajectory, branch 1
    the crash-free one. A record whose branch is entirely NaN (in prediction
    or truth) is skipped and counted; single NaN entries mark horizons where
    the record does not apply.
    """
    pred = np.asarray(pred_branches, dtype=np.float64)
    true = np.asarray(true_branches, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 3 or pred.shape[1] != 2:
        raise ShapeError("crmse", pred.shape, true.shape, detail="expected (R, 2, H)")
    missing = np.isnan(pred).all(axis=2).any(axis=1) | np.isnan(true).all(axis=2).any(axis=1)
    kept_pred, kept_true = pred[~missing], true[~missing]
    errors = (kept_true[:, 0] - kept_true[:, 1]) - (kept_pred[:, 0] - kept_pred[:, 1])
    if errors.size == 0:
        values = np.full(pred.shape[2], np.nan)
    else:
        values = _pooled_rmse(errors)
    return CrmseResult(values, used=int((~missing).sum()), skipped=int(missing.sum()))
