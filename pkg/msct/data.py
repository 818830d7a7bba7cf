"""Array views of unit lists: standardisation and batched model inputs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import DatasetError, HorizonRangeError, UsageError


def one_hot(classes: np.ndarray, k: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= k):
        raise DatasetError(f"treatment class outside [0, {k})")
    return np.eye(k)[classes]


def treatment_classes(unit: TimeSeriesUnit, k: int) -> np.ndarray:
    """Binary crash indicator for K=2, crash type (0 = none) otherwise."""
    return unit.t.astype(np.int64) if k == 2 else unit.t_type.astype(np.int64)


def _safe_std(values: np.ndarray, axis=None) -> np.ndarray:
    std = np.std(values, axis=axis)
    return np.where(std > 0, std, 1.0)


@dataclass
class Normalizer:
    """Per-feature standardisation fitted on the training split."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    s_mean: np.ndarray
    s_std: np.ndarray

    @classmethod
    def fit(cls, units: Sequence[TimeSeriesUnit]) -> "Normalizer":
        if not units:
            raise UsageError("cannot fit standardisation on an empty split")
        x = np.concatenate([u.x for u in units])
        y = np.concatenate([u.y for u in units])
        s = np.stack([u.s for u in units])
        return cls(
            x_mean=x.mean(axis=0),
            x_std=_safe_std(x, axis=0),
            y_mean=float(y.mean()),
            y_std=float(_safe_std(y)),
            s_mean=s.mean(axis=0),
            s_std=_safe_std(s, axis=0),
        )

    @classmethod
    def identity(cls, d_x: int, d_s: int) -> "Normalizer":
        return cls(np.zeros(d_x), np.ones(d_x), 0.0, 1.0, np.zeros(d_s), np.ones(d_s))

    def y(self, values):
        return (np.asarray(values, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, values):
        return np.asarray(values, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "s_mean": self.s_mean.tolist(),
            "s_std": self.s_std.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Normalizer":
        return cls(
            x_mean=np.asarray(payload["x_mean"], dtype=np.float64),
            x_std=np.asarray(payload["x_std"], dtype=np.float64),
            y_mean=float(payload["y_mean"]),
            y_std=float(payload["y_std"]),
            s_mean=np.asarray(payload["s_mean"], dtype=np.float64),
            s_std=np.asarray(payload["s_std"], dtype=np.float64),
        )


@dataclass
class SequenceBatch:
    """Standardised arrays for ``B`` equal-length units."""

    x: np.ndarray  # (B, L, d_x)
    classes: np.ndarray  # (B, L) int
    y: np.ndarray  # (B, L)
    s: np.ndarray  # (B, d_s)
    k: int

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def seq_len(self) -> int:
        return self.y.shape[1]

    def treatments(self) -> np.ndarray:
        return one_hot(self.classes, self.k)

    def take(self, index) -> "SequenceBatch":
        return SequenceBatch(self.x[index], self.classes[index], self.y[index], self.s[index], self.k)


def make_batch(units: Sequence[TimeSeriesUnit], normalizer: Normalizer, k: int) -> SequenceBatch:
    if not units:
        raise UsageError("empty unit list")
    lengths = {u.seq_len for u in units}
    if len(lengths) != 1:
        raise DatasetError(f"units differ in length: {sorted(lengths)}")
    x = np.stack([(u.x - normalizer.x_mean) / normalizer.x_std for u in units])
    y = np.stack([normalizer.y(u.y) for u in units])
    s = np.stack([(u.s - normalizer.s_mean) / normalizer.s_std for u in units])
    classes = np.stack([treatment_classes(u, k) for u in units])
    return SequenceBatch(x, classes, y, s, k)


def strategy_plans(strategies: Sequence[InterventionStrategy], tau_max: int, crash_class: int = 1) -> np.ndarray:
    """Binary strategies as class plans ``(S, n + 1)`` with a crash-free final step."""
    if not strategies:
        raise UsageError("at least one strategy is required")
    lengths = {len(s) for s in strategies}
    if len(lengths) != 1:
        raise UsageError(f"strategies must share one horizon, got {sorted(lengths)}")
    vectors = np.array([s.treatments for s in strategies], dtype=np.int64)
    if vectors.shape[1] > tau_max:
        raise HorizonRangeError(f"strategy length {vectors.shape[1]} exceeds tau_max={tau_max}")
    classes = np.where(vectors == 1, crash_class, 0)
    return np.concatenate([classes, np.zeros((len(classes), 1), dtype=np.int64)], axis=1)


def factual_plans(unit: TimeSeriesUnit, anchors: np.ndarray, horizon: int, k: int) -> np.ndarray:
    """Observed treatment classes of steps ``anchor+1 .. anchor+horizon`` per anchor."""
    anchors = np.asarray(anchors, dtype=np.int64)
    if horizon < 1 or anchors.size == 0 or anchors.min() < 0 or anchors.max() + horizon > unit.seq_len - 1:
        raise HorizonRangeError(f"anchors with horizon {horizon} exceed sequence length {unit.seq_len}")
    classes = treatment_classes(unit, k)
    return np.stack([classes[a + 1 : a + horizon + 1] for a in anchors])
