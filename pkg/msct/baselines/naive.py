"""Last observation carried forward."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from msct.data import strategy_plans
from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import HorizonRangeError


class NaiveForecaster:
    """Predicts the anchor's speed for every horizon, whatever the treatments."""

    name = "naive"

    def __init__(self, tau_max: int = 5):
        self.tau_max = tau_max

    def fit(self, *_args, **_kwargs) -> "NaiveForecaster":
        return self

    def _anchor_speeds(self, unit: TimeSeriesUnit, anchors: Sequence[int]) -> np.ndarray:
        anchors = np.asarray(list(anchors), dtype=np.int64)
        if anchors.size == 0 or anchors.min() < 0 or anchors.max() >= unit.seq_len:
            raise HorizonRangeError(f"anchors outside [0, {unit.seq_len})")
        return unit.y[anchors]

    def rollout_unit(
        self,
        unit: TimeSeriesUnit,
        anchors: Sequence[int],
        strategies: Sequence[InterventionStrategy],
    ) -> np.ndarray:
        plans = strategy_plans(strategies, self.tau_max)
        last = self._anchor_speeds(unit, anchors)
        return np.broadcast_to(last[:, None, None], (len(last),) + plans.shape).copy()

    def predict_factual(self, unit: TimeSeriesUnit, anchors: Sequence[int], horizon: int) -> np.ndarray:
        last = self._anchor_speeds(unit, anchors)
        return np.repeat(last[:, None], horizon, axis=1)
